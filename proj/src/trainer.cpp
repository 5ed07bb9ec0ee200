// SPDX-License-Identifier: Apache-2.0
#include "hialign/trainer.hpp"

#include <cmath>
#include <iostream>
#include <limits>

#include <json.hpp>

#include "hialign/alignment.hpp"
#include "hialign/errors.hpp"
#include "hialign/gradcheck.hpp"

namespace hialign {

namespace {

using Json = nlohmann::ordered_json;

const char* const kEncoderPrefixes[] = {"frame.", "temporal.", "llm."};

std::vector<std::vector<std::string>> sentences_of(const std::vector<Sample>& samples) {
  std::vector<std::vector<std::string>> out;
  for (const auto& s : samples) out.push_back(s.sentence);
  return out;
}

void init_visual(ParameterStore& store, const EncoderConfig& cfg, const Rng& root) {
  Rng r1 = root.split("frame"), r2 = root.split("temporal"), r3 = root.split("llm");
  init_frame_encoder(store, cfg, r1);
  init_temporal_encoder(store, cfg, r2);
  init_llm_encoder(store, cfg, r3);
}

// Frame encoding runs on the concatenated valid frames of the whole batch so
// batch statistics never see padding; the rest is per sample.
std::vector<Var> encode_segments(Forward& f, const EncoderConfig& cfg, const Batch& b, double jitter = 0.0) {
  std::vector<double> rows;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const Tensor s = b.sample_frames(i);
    rows.insert(rows.end(), s.data().begin(), s.data().end());
  }
  std::size_t total = 0;
  for (auto l : b.frame_lengths) total += l;
  const std::size_t width = b.frames.dim(2);
  if (f.training && jitter > 0.0 && f.rng)
    for (auto& v : rows) v += jitter * f.rng->normal();
  Var frames = frame_encode(f, cfg, f.tape.constant(Tensor({total, width}, std::move(rows))));
  std::vector<Var> out;
  std::size_t off = 0;
  for (auto len : b.frame_lengths) {
    out.push_back(temporal_encode(f, cfg, ops::slice_rows(frames, off, off + len)));
    off += len;
  }
  return out;
}

struct PretrainLosses {
  Var total, align, psp;
};

PretrainLosses pretrain_batch(Forward& f, const EncoderConfig& cfg, const Batch& b, const std::vector<Tensor>& labels,
                              const PrototypeMatrix& protos, double lambda, double jitter = 0.0) {
  const auto segments = encode_segments(f, cfg, b, jitter);
  std::vector<Var> video, text;
  Var psp = f.tape.constant(Tensor::scalar(0.0));
  for (std::size_t i = 0; i < b.size(); ++i) {
    const Var& z = segments[i];
    auto loc = localize(similarity_scores(project_segments(f, z), protos), f.p(AlignmentTemperatures::kTime),
                        f.p(AlignmentTemperatures::kPrototype));
    psp = ops::add(psp, psp_loss(loc.scores, labels[b.indices[i]]));
    video.push_back(ops::mean_pool(llm_encode(f, cfg, z)));
    const auto ids = b.sample_tokens(i);
    text.push_back(ops::mean_pool(text_encode_frozen(f, cfg, ids)));
  }
  psp = ops::scale(psp, 1.0 / static_cast<double>(b.size()));
  Var align = align_loss(ops::stack(video), ops::stack(text), f.p(AlignmentTemperatures::kContrastive));
  return {pretrain_loss(align, psp, lambda), align, psp};
}

Var video_memory(Forward& f, const EncoderConfig& cfg, Var segments) {
  return llm_encode(f, cfg, mapper(f, segments));
}

Var slt_batch(Forward& f, const EncoderConfig& cfg, const Batch& b, double jitter = 0.0) {
  const auto segments = encode_segments(f, cfg, b, jitter);
  Var total = f.tape.constant(Tensor::scalar(0.0));
  for (std::size_t i = 0; i < b.size(); ++i) {
    const auto tf = teacher_forcing(b.sample_tokens(i));
    Var logits = decode_teacher_forced(f, cfg, video_memory(f, cfg, segments[i]), tf.inputs);
    total = ops::add(total, slt_loss(logits, tf.targets));
  }
  return ops::scale(total, 1.0 / static_cast<double>(b.size()));
}

Tensor memory_for(ParameterStore& params, const EncoderConfig& cfg, const Tensor& frames) {
  Tape tape;
  tape.set_grad_enabled(false);
  Forward f{tape, params, false, nullptr};
  Var z = temporal_encode(f, cfg, frame_encode(f, cfg, tape.constant(frames)));
  return video_memory(f, cfg, z).value();
}

struct Schedule {
  std::size_t steps_per_epoch, total, warmup;
};

Schedule make_schedule(const TrainConfig& t, std::size_t samples, std::size_t epochs) {
  Schedule s;
  s.steps_per_epoch = (samples + t.batch_size - 1) / t.batch_size;
  s.total = s.steps_per_epoch * epochs;
  // Short runs would otherwise never leave the warmup.
  s.warmup = std::min(t.warmup_epochs * s.steps_per_epoch, s.total - 1);
  return s;
}

class Logger {
 public:
  explicit Logger(const TrainOptions& opt, std::vector<std::string>& sink) : opt_(opt), sink_(sink) {}
  void operator()(const Json& j) {
    sink_.push_back(j.dump());
    if (opt_.log) *opt_.log << sink_.back() << '\n' << std::flush;
  }

 private:
  const TrainOptions& opt_;
  std::vector<std::string>& sink_;
};

std::uint64_t epoch_seed(const TrainConfig& t, const std::string& phase, std::size_t epoch) {
  return Rng(t.seed).split(phase).split(epoch).next_u64();
}

// One optimizer step: backward, clip, AdamW. Returns the pre-clip gradient norm.
double optimize(Tape& tape, Var loss, ParameterStore& params, AdamState& state, const TrainConfig& t, double lr,
                const std::string& where) {
  if (!std::isfinite(loss.value().item())) throw NumericError(where + ": non-finite loss");
  tape.backward(loss);
  Gradients grads = tape.param_grads(params);
  for (auto it = grads.begin(); it != grads.end();) {
    if (params.get(it->first).receives_grad()) ++it;
    else it = grads.erase(it);
  }
  const double norm = clip_grad_norm(grads, t.clip_norm);
  try {
    adamw_step(params, grads, state, lr, AdamWOptions{0.9, 0.999, 1e-8, t.weight_decay});
  } catch (const NumericError& e) {
    throw NumericError(where + ": " + e.what());
  }
  return norm;
}

std::vector<Tensor> label_table(const std::vector<Sample>& samples, const PosLexicon& lex,
                                const PseudoGlossVocab& vocab) {
  std::vector<Tensor> out;
  for (const auto& s : samples) out.push_back(labels_for(s.sentence, lex, vocab));
  return out;
}


}  // namespace

TrainResult pretrain(const Config& cfg, const Corpus& corpus, const TrainOptions& opt) {
  cfg.validate();
  if (corpus.train.empty()) throw ContractError("pretrain: empty training split");
  const auto& ec = cfg.encoder;
  const auto& tc = cfg.train;
  TrainResult result;
  Logger log(opt, result.log);

  Checkpoint ckpt;
  ckpt.phase = "pretrain";
  ckpt.config = cfg;
  ckpt.config_hash = architecture_hash(ec);
  ckpt.tokens = TokenVocab::build(sentences_of(corpus.train));
  ckpt.glosses = PseudoGlossVocab::build(sentences_of(corpus.train), corpus.lexicon);
  const PrototypeMatrix protos = build_prototypes(ckpt.glosses, corpus.embeddings, ec.proto_dim);
  const auto train_labels = label_table(corpus.train, corpus.lexicon, ckpt.glosses);
  const auto dev_labels = label_table(corpus.dev, corpus.lexicon, ckpt.glosses);

  const Rng root = Rng(tc.seed).split("init");
  init_visual(ckpt.params, ec, root);
  Rng ra = root.split("align"), rt = root.split("text");
  init_alignment_heads(ckpt.params, ec, ra);
  init_text_encoder(ckpt.params, ec, ckpt.tokens.size(), rt);

  const Schedule sched = make_schedule(tc, corpus.train.size(), tc.pretrain_epochs);
  const auto dev_batches = make_batches(corpus.dev, ckpt.tokens, tc.batch_size, 0, false);
  std::size_t step = 0;
  result.best.best_value = std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 1; epoch <= tc.pretrain_epochs; ++epoch) {
    double sum = 0, sum_align = 0, sum_psp = 0, lr = 0;
    const auto batches =
        make_batches(corpus.train, ckpt.tokens, tc.batch_size, epoch_seed(tc, "pretrain", epoch), true);
    for (const auto& b : batches) {
      lr = one_cycle_cosine_lr(step, sched.total, sched.warmup, tc.lr);
      Rng drop = Rng(tc.seed).split("pretrain/dropout").split(step);
      Tape tape;
      Forward f{tape, ckpt.params, true, &drop};
      const auto l = pretrain_batch(f, ec, b, train_labels, protos, tc.lambda, tc.augment_noise);
      optimize(tape, l.total, ckpt.params, ckpt.optimizer, tc, lr,
               "pretrain epoch " + std::to_string(epoch) + " step " + std::to_string(step));
      clamp_temperatures(ckpt.params);
      sum += l.total.value().item();
      sum_align += l.align.value().item();
      sum_psp += l.psp.value().item();
      ++step;
    }
    const double nb = static_cast<double>(batches.size());
    log(Json{{"phase", "pretrain"}, {"epoch", epoch}, {"split", "train"}, {"loss", sum / nb},
             {"align", sum_align / nb}, {"psp", sum_psp / nb}, {"lr", lr}});
    double selection = sum / nb;
    if (!dev_batches.empty()) {
      double d = 0, da = 0, dp = 0;
      for (const auto& b : dev_batches) {
        Tape tape;
        tape.set_grad_enabled(false);
        Forward f{tape, ckpt.params, false, nullptr};
        const auto l = pretrain_batch(f, ec, b, dev_labels, protos, tc.lambda);
        d += l.total.value().item();
        da += l.align.value().item();
        dp += l.psp.value().item();
      }
      const double n = static_cast<double>(dev_batches.size());
      log(Json{{"phase", "pretrain"}, {"epoch", epoch}, {"split", "dev"}, {"loss", d / n}, {"align", da / n},
               {"psp", dp / n}, {"lr", lr}});
      selection = d / n;
    }
    if (opt.on_epoch) opt.on_epoch("pretrain", epoch, ckpt.params);
    ckpt.epoch = epoch;
    if (selection < result.best.best_value) {
      ckpt.best_value = selection;
      result.best = ckpt;
    }
    ckpt.best_value = result.best.best_value;
  }
  result.last = ckpt;
  return result;
}

TrainResult finetune(const Config& cfg, const Corpus& corpus, const Checkpoint* init, const TrainOptions& opt) {
  cfg.validate();
  if (corpus.train.empty()) throw ContractError("finetune: empty training split");
  const auto& ec = cfg.encoder;
  const auto& tc = cfg.train;
  TrainResult result;
  Logger log(opt, result.log);

  Checkpoint ckpt;
  ckpt.phase = "finetune";
  ckpt.config = cfg;
  ckpt.config_hash = architecture_hash(ec);
  ckpt.tokens = TokenVocab::build(sentences_of(corpus.train));
  const Rng root = Rng(tc.seed).split("init");
  init_visual(ckpt.params, ec, root);
  if (init) {
    if (init->config_hash != ckpt.config_hash) {
      std::cerr << "warning: checkpoint encoder config hash " << init->config_hash << " differs from " << ckpt.config_hash
                << '\n';
    }
    ckpt.glosses = init->glosses;
    for (const auto& name : ckpt.params.names()) {
      if (!init->params.contains(name)) throw LoadError("init checkpoint lacks parameter '" + name + "'");
      const Tensor& src = init->params.value(name);
      Tensor& dst = ckpt.params.value(name);
      if (src.shape() != dst.shape()) {
        throw LoadError("init checkpoint parameter '" + name + "' has shape " + shape_str(src.shape()) +
                        ", model expects " + shape_str(dst.shape()));
      }
      dst = src;
    }
  }
  init_mapper(ckpt.params, ec);
  Rng rd = root.split("decoder");
  init_decoder(ckpt.params, ec, ckpt.tokens.size(), rd);

  const auto dev_batches = make_batches(corpus.dev, ckpt.tokens, tc.batch_size, 0, false);
  result.best.best_value = -1.0;
  double best_dev_loss = std::numeric_limits<double>::infinity();
  std::size_t epoch = 0;
  for (int stage = 1; stage <= 2; ++stage) {
    const std::string phase = stage == 1 ? "stage1" : "stage2";
    const std::size_t epochs = stage == 1 ? tc.stage1_epochs : tc.stage2_epochs;
    if (epochs == 0) continue;
    ckpt.params.set_frozen("", stage == 1);
    if (stage == 1) {
      ckpt.params.set_frozen("mapper.", false);
      ckpt.params.set_frozen("decoder.", false);
    }
    log(Json{{"phase", phase}, {"event", "stage_start"}, {"epoch", epoch + 1}});
    const Schedule sched = make_schedule(tc, corpus.train.size(), epochs);
    std::size_t step = 0;
    for (std::size_t e = 1; e <= epochs; ++e) {
      ++epoch;
      double sum = 0, lr = 0;
      const auto batches = make_batches(corpus.train, ckpt.tokens, tc.batch_size, epoch_seed(tc, phase, e), true);
      for (const auto& b : batches) {
        lr = one_cycle_cosine_lr(step, sched.total, sched.warmup, tc.lr);
        Rng drop = Rng(tc.seed).split(phase + "/dropout").split(step);
        Tape tape;
        Forward f{tape, ckpt.params, true, &drop};
        Var loss = slt_batch(f, ec, b, tc.augment_noise);
        optimize(tape, loss, ckpt.params, ckpt.optimizer, tc, lr,
                 phase + " epoch " + std::to_string(epoch) + " step " + std::to_string(step));
        sum += loss.value().item();
        ++step;
      }
      log(Json{{"phase", phase}, {"epoch", epoch}, {"split", "train"}, {"loss", sum / static_cast<double>(batches.size())},
               {"lr", lr}});
      if (opt.on_epoch) opt.on_epoch(phase, epoch, ckpt.params);
      ckpt.epoch = epoch;
      if (!corpus.dev.empty()) {
        const double bleu4 = evaluate(ckpt, corpus.dev).bleu[3];
        const double dev_loss = teacher_forced_loss(ckpt, corpus.dev);
        log(Json{{"phase", phase}, {"epoch", epoch}, {"split", "dev"}, {"loss", dev_loss}, {"bleu4", bleu4},
                 {"lr", lr}});
        if (bleu4 > result.best.best_value || (bleu4 == result.best.best_value && dev_loss < best_dev_loss)) {
          best_dev_loss = dev_loss;
          ckpt.best_value = bleu4;
          result.best = ckpt;
        }
      } else {
        ckpt.best_value = 0.0;
        result.best = ckpt;
      }
      ckpt.best_value = result.best.best_value;
    }
  }
  result.last = ckpt;
  return result;
}

std::vector<std::string> translate(const Checkpoint& ckpt, const Tensor& frames) {
  if (!ckpt.params.contains("decoder.embed")) throw ContractError("translate: checkpoint has no decoder (not fine-tuned)");
  ParameterStore params = ckpt.params;
  const auto& ec = ckpt.config.encoder;
  const auto ids = greedy_decode(params, ec, memory_for(params, ec, frames), ec.max_decode_len);
  return ckpt.tokens.decode(ids);
}

EvalReport evaluate(const Checkpoint& ckpt, const std::vector<Sample>& samples, std::vector<Tokens>* hypotheses) {
  std::vector<Tokens> hyps, refs;
  for (const auto& s : samples) {
    hyps.push_back(translate(ckpt, s.frames));
    refs.push_back(s.sentence);
  }
  auto report = evaluate_corpus(hyps, refs);
  if (hypotheses) *hypotheses = std::move(hyps);
  return report;
}

double teacher_forced_loss(const Checkpoint& ckpt, const std::vector<Sample>& samples) {
  if (samples.empty()) throw DomainError("teacher_forced_loss: no samples");
  ParameterStore params = ckpt.params;
  const auto& ec = ckpt.config.encoder;
  double total = 0.0;
  for (const auto& s : samples) {
    Tape tape;
    tape.set_grad_enabled(false);
    Forward f{tape, params, false, nullptr};
    Var z = temporal_encode(f, ec, frame_encode(f, ec, tape.constant(s.frames)));
    const auto tf = teacher_forcing(ckpt.tokens.encode(s.sentence));
    total += slt_loss(decode_teacher_forced(f, ec, video_memory(f, ec, z), tf.inputs), tf.targets).value().item();
  }
  return total / static_cast<double>(samples.size());
}

GradcheckResult run_gradcheck(const Config& base, double tolerance) {
  Config cfg = base;
  auto& ec = cfg.encoder;
  ec.input_dim = 4;
  ec.frame_dim = 8;
  ec.hidden = 8;
  ec.heads = 2;
  ec.ffn = 8;
  ec.llm_layers = 1;
  ec.decoder_layers = 1;
  ec.text_layers = 1;
  ec.proto_dim = 6;
  ec.lora_rank = 2;
  ec.lora_alpha = 4.0;
  ec.lora_dropout = 0.0;
  ec.dropout = 0.0;
  auto& cc = cfg.corpus;
  cc.glosses = 5;
  cc.input_dim = 4;
  cc.embedding_dim = 6;
  cc.frames_min = 1;
  cc.frames_max = 2;
  cc.glosses_min = 2;
  cc.glosses_max = 3;
  cc.pad_prob = 0.0;
  cc.train = 3;
  cc.dev = 0;
  cc.test = 0;
  const Corpus corpus = generate_corpus(cc);

  const auto tokens = TokenVocab::build(sentences_of(corpus.train));
  const auto glosses = PseudoGlossVocab::build(sentences_of(corpus.train), corpus.lexicon);
  const auto protos = build_prototypes(glosses, corpus.embeddings, ec.proto_dim);
  const auto labels = label_table(corpus.train, corpus.lexicon, glosses);
  const Batch batch = make_batches(corpus.train, tokens, 3, 0, false).at(0);

  Rng rng = Rng(cfg.train.seed).split("gradcheck");
  ParameterStore params;
  init_visual(params, ec, rng);
  init_alignment_heads(params, ec, rng);
  init_text_encoder(params, ec, tokens.size(), rng);
  init_mapper(params, ec);
  init_decoder(params, ec, tokens.size(), rng);
  // Nonzero adapters and a perturbed mapper so every path carries gradient.
  for (const auto& n : params.names()) {
    if (n.ends_with(".lora_b") || n.starts_with("mapper."))
      for (auto& v : params.value(n).storage()) v += 0.2 * rng.normal();
  }

  GradcheckResult result;
  auto check = [&](const std::string& name, std::function<Var(Forward&)> loss) {
    const auto rep = gradcheck(
        [&](Tape& tape, ParameterStore& ps) {
          Forward f{tape, ps, true, nullptr};
          return loss(f);
        },
        params, 1e-4, tolerance);
    result.losses.emplace_back(name, rep.max_rel_err);
    result.passed = result.passed && rep.passed;
  };
  auto pre = [&](Forward& f, double lambda) { return pretrain_batch(f, ec, batch, labels, protos, lambda); };
  check("psp", [&](Forward& f) { return pre(f, 1.0).psp; });
  check("align", [&](Forward& f) { return pre(f, 1.0).align; });
  check("pretrain_lambda_0", [&](Forward& f) { return pre(f, 0.0).total; });
  check("pretrain_lambda_0.5", [&](Forward& f) { return pre(f, 0.5).total; });
  check("pretrain_lambda_1", [&](Forward& f) { return pre(f, 1.0).total; });
  check("slt", [&](Forward& f) { return slt_batch(f, ec, batch); });
  return result;
}

}  // namespace hialign
