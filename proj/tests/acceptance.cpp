// Acceptance suite: one PASS/FAIL line per criterion.
// Usage: hialign_acceptance [criterion numbers...]   (default: all)
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>

#include "hialign/alignment.hpp"
#include "hialign/trainer.hpp"
#include "metric_oracles.hpp"
#include "test_util.hpp"

using namespace hialign;
using namespace hialign::testing;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::string detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + ("failed: " + what);
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

Config config_file(const std::string& name) { return load_config(std::filesystem::path(HIALIGN_CONFIG_DIR) / name); }

// 1. Gradients of every loss against finite differences.
Outcome gradcheck_criterion() {
  Outcome o;
  const auto t0 = Clock::now();
  const auto r = run_gradcheck(Config{});
  const double secs = seconds_since(t0);
  for (const auto& [name, err] : r.losses) {
    o.require(err <= 1e-4, name + " rel err " + fmt("%.3g", err));
    o.note(name + "=" + fmt("%.2e", err));
  }
  o.require(r.losses.size() == 6, "six losses checked");
  o.require(secs < 60.0, "runtime < 60 s");
  o.note("runtime " + fmt("%.1f", secs) + " s");
  return o;
}

// 2. Localization softmaxes on random similarity maps.
Outcome localization_criterion() {
  Outcome o;
  Rng rng(20);
  double worst_sum = 0.0;
  bool open_interval = true;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t t = rng.uniform_int(1, 16), u1 = rng.uniform_int(2, 12);
    const Tensor s = random_uniform({t, u1}, rng, -1.0, 1.0);
    Tape tape;
    auto l = localize(tape.constant(s), tape.constant(Tensor::scalar(AlignmentTemperatures::kTimeInit)),
                      tape.constant(Tensor::scalar(AlignmentTemperatures::kPrototypeInit)));
    for (std::size_t j = 0; j < u1; ++j) {
      double col = 0.0;
      for (std::size_t i = 0; i < t; ++i) col += l.time_softmax.value().at(i, j);
      worst_sum = std::max(worst_sum, std::abs(col - 1.0));
      const double e = l.scores.value()[j];
      open_interval = open_interval && e > 0.0 && e < 1.0;
    }
    for (std::size_t i = 0; i < t; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < u1; ++j) row += l.prototype_softmax.value().at(i, j);
      worst_sum = std::max(worst_sum, std::abs(row - 1.0));
    }
  }
  o.require(worst_sum <= 1e-6, "softmax sums within 1e-6");
  o.require(open_interval, "scores strictly inside (0, 1)");
  double worst_uniform = 0.0;
  for (std::size_t u1 : {2, 5, 11}) {
    Tape tape;
    auto l = localize(tape.constant(Tensor({7, u1}, 0.37)), tape.constant(Tensor::scalar(0.1)),
                      tape.constant(Tensor::scalar(0.1)));
    for (double e : l.scores.value().data())
      worst_uniform = std::max(worst_uniform, std::abs(e - 1.0 / static_cast<double>(u1)));
  }
  o.require(worst_uniform <= 1e-9, "uniform map gives 1/(U+1)");
  o.note("max |sum-1| " + fmt("%.1e", worst_sum) + ", uniform err " + fmt("%.1e", worst_uniform));
  return o;
}

// 3. Contrastive loss closed forms.
Outcome contrastive_criterion() {
  Outcome o;
  auto value = [](const Tensor& m, const Tensor& l, double tau) {
    Tape tape;
    return align_loss(tape.constant(m), tape.constant(l), tape.constant(Tensor::scalar(tau))).value().item();
  };
  Rng rng(30);
  const double single = value(random_tensor({1, 6}, rng), random_tensor({1, 6}, rng), 0.07);
  o.require(std::abs(single) <= 1e-9, "B=1 gives 0");
  double worst = 0.0;
  for (std::size_t b : {2, 4, 8}) {
    const Tensor same = Tensor({b, 6}, 0.5);
    worst = std::max(worst, std::abs(value(same, same, 0.07) - std::log(static_cast<double>(b))));
  }
  o.require(worst <= 1e-6, "equal similarities give ln B");
  const double pair = value(Tensor::identity(2), Tensor::identity(2), 1.0);
  o.require(std::abs(pair - 0.31326) <= 1e-4, "orthonormal pair gives 0.31326");
  o.note("B=1 " + fmt("%.1e", single) + ", ln B err " + fmt("%.1e", worst) + ", pair " + fmt("%.6f", pair));
  return o;
}

// 4. Metrics against brute-force references.
Outcome metrics_criterion() {
  Outcome o;
  Rng rng(40);
  double worst = 0.0;
  for (int c = 0; c < 50; ++c) {
    const std::size_t alphabet = rng.uniform_int(2, 10), pairs = rng.uniform_int(1, 8);
    std::vector<Tokens> hyps, refs;
    for (std::size_t s = 0; s < pairs; ++s) {
      hyps.push_back(random_sentence(rng, alphabet, 12));
      refs.push_back(random_sentence(rng, alphabet, 12));
    }
    if (hyps[0].empty()) hyps[0] = {"a"};
    const auto rep = evaluate_corpus(hyps, refs);
    for (std::size_t n = 1; n <= 4; ++n) worst = std::max(worst, std::abs(rep.bleu[n - 1] - bleu_oracle(hyps, refs, n)));
    double rouge = 0.0;
    for (std::size_t s = 0; s < pairs; ++s) {
      const double l = static_cast<double>(lcs_enumerate(hyps[s], refs[s]));
      if (l > 0) {
        const double p = l / static_cast<double>(hyps[s].size()), r = l / static_cast<double>(refs[s].size());
        rouge += 2 * p * r / (p + r);
      }
    }
    worst = std::max(worst, std::abs(rep.rouge_l - rouge / static_cast<double>(pairs)));
  }
  o.require(worst <= 1e-9, "oracle agreement to 1e-9");
  const std::vector<Tokens> corpus{tokenize("morgen scheint die sonne"), tokenize("im norden regnet es stark")};
  const auto self = evaluate_corpus(corpus, corpus);
  o.require(self.bleu[3] == 100.0 && self.rouge_l == 1.0, "self evaluation gives 100 / 1");
  const auto short_hyp = evaluate_corpus({tokenize("a b c d")}, {tokenize("a b c d e")});
  o.require(std::abs(short_hyp.bleu[3] - 77.88) <= 0.01, "brevity case 77.88");
  o.note("oracle err " + fmt("%.1e", worst) + ", brevity case " + fmt("%.4f", short_hyp.bleu[3]));
  return o;
}

// 5. Mechanism identities.
Outcome mechanism_criterion() {
  Outcome o;
  EncoderConfig cfg;
  cfg.input_dim = 6;
  cfg.frame_dim = cfg.hidden = 16;
  cfg.heads = 2;
  cfg.ffn = 32;
  cfg.llm_layers = cfg.text_layers = 2;
  cfg.lora_rank = 4;
  cfg.dropout = cfg.lora_dropout = 0.0;
  Rng rng(50);

  ParameterStore with;
  init_llm_encoder(with, cfg, rng);
  ParameterStore without = with;
  for (const auto& n : with.names())
    if (n.find(".lora_") != std::string::npos) without.erase_prefix(n);
  const Tensor z = random_tensor({9, 16}, rng);
  auto run_llm = [&](ParameterStore& ps) {
    Tape tape;
    Forward f{tape, ps, false, nullptr};
    return llm_encode(f, cfg, tape.constant(z)).value();
  };
  const double lora_diff = max_abs_diff(run_llm(with), run_llm(without));
  o.require(lora_diff == 0.0, "LoRA at init leaves outputs unchanged");

  double rope_err = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor q = random_tensor({1, 2, 8}, rng), k = random_tensor({1, 2, 8}, rng);
    const std::size_t m = rng.uniform_int(0, 200), n = rng.uniform_int(0, 200), s = rng.uniform_int(1, 500);
    auto rotdot = [&](std::size_t pm, std::size_t pn) {
      std::size_t a[] = {pm}, b[] = {pn};
      const Tensor rq = ops::rope_rotate(q, a), rk = ops::rope_rotate(k, b);
      double d = 0.0;
      for (std::size_t i = 0; i < rq.numel(); ++i) d += rq.storage()[i] * rk.storage()[i];
      return d;
    };
    rope_err = std::max(rope_err, std::abs(rotdot(m, n) - rotdot(m + s, n + s)));
  }
  o.require(rope_err <= 1e-5, "RoPE relative shift");

  bool banded = true;
  const auto spec = temporal_block_spec(cfg).self_attn;
  const auto weights = ops::attention_weights(random_tensor({30, 16}, rng), random_tensor({30, 16}, rng), spec);
  for (const auto& w : weights)
    for (std::size_t i = 0; i < 30; ++i)
      for (std::size_t j = 0; j < 30; ++j) {
        const std::size_t d = i > j ? i - j : j - i;
        if ((d > 3 && w.at(i, j) != 0.0) || (d <= 3 && !(w.at(i, j) > 0.0))) banded = false;
      }
  o.require(banded && spec.half_window == 3, "attention strictly banded at window 7");

  ParameterStore temporal;
  init_temporal_encoder(temporal, cfg, rng);
  bool lengths = true;
  for (std::size_t t = 1; t <= 40; ++t) {
    Tape tape;
    Forward f{tape, temporal, false, nullptr};
    const auto out = temporal_encode(f, cfg, tape.constant(random_tensor({t, 16}, rng))).value();
    lengths = lengths && out.rows() == (t + 1) / 2;
  }
  o.require(lengths, "temporal output length ceil(T/2)");

  ParameterStore text;
  init_text_encoder(text, cfg, 12, rng);
  Tape tape;
  Forward f{tape, text, true, &rng};
  const std::vector<int> ids{0, 5, 9, 7, 1};
  tape.backward(weighted_sum(tape, text_encode_frozen(f, cfg, ids), 5));
  double text_grad = 0.0;
  for (const auto& n : text.names()) text_grad = std::max(text_grad, tape.grad(f.p(n)).max_abs());
  o.require(text_grad == 0.0, "frozen text encoder gets zero gradient");
  o.note("lora diff " + fmt("%g", lora_diff) + ", rope err " + fmt("%.1e", rope_err) + ", text grad " +
         fmt("%g", text_grad));
  return o;
}

// 6. Lambda ablation and pre-training benefit.
Outcome ablation_criterion() {
  Outcome o;
  const auto t0 = Clock::now();
  const Config base = config_file("ablation.json");
  const Corpus corpus = generate_corpus(base.corpus);
  double with_psp = 0, without_psp = 0, scratch = 0;
  const std::uint64_t seeds[] = {0, 1, 2};
  for (auto seed : seeds) {
    Config cfg = base;
    cfg.train.seed = seed;
    double dev[2];
    for (int lam = 0; lam <= 1; ++lam) {
      cfg.train.lambda = lam;
      const auto pre = pretrain(cfg, corpus);
      dev[lam] = finetune(cfg, corpus, &pre.best).best.best_value;
    }
    const double rnd = finetune(cfg, corpus, nullptr).best.best_value;
    std::printf("  seed %llu: dev BLEU-4 lambda=1 %.2f, lambda=0 %.2f, random init %.2f (%.0f s)\n",
                static_cast<unsigned long long>(seed), dev[1], dev[0], rnd, seconds_since(t0));
    std::fflush(stdout);
    with_psp += dev[1] / 3;
    without_psp += dev[0] / 3;
    scratch += rnd / 3;
  }
  const double secs = seconds_since(t0);
  o.require(with_psp > without_psp, "lambda=1 beats lambda=0");
  o.require(std::max(with_psp, without_psp) > scratch && with_psp > scratch, "pre-training beats random init");
  o.require(secs <= 1800.0, "runtime <= 30 min");
  o.note("mean dev BLEU-4 lambda=1 " + fmt("%.2f", with_psp) + ", lambda=0 " + fmt("%.2f", without_psp) +
         ", random init " + fmt("%.2f", scratch) + ", runtime " + fmt("%.0f", secs) + " s");
  return o;
}

// 7. Memorizing a 10-sample corpus.
Outcome overfit_criterion() {
  Outcome o;
  const auto t0 = Clock::now();
  const Config cfg = config_file("overfit.json");
  const Corpus corpus = generate_corpus(cfg.corpus);
  const auto r = finetune(cfg, corpus, nullptr);
  const double ce = teacher_forced_loss(r.last, corpus.train);
  const double bleu4 = evaluate(r.last, corpus.train).bleu[3];
  const double secs = seconds_since(t0);
  o.require(cfg.train.stage1_epochs + cfg.train.stage2_epochs <= 300, "at most 300 epochs");
  o.require(ce < 0.1, "teacher-forced CE < 0.1");
  o.require(bleu4 > 95.0, "train BLEU-4 > 95");
  o.require(secs < 300.0, "runtime < 5 min");
  o.note("CE " + fmt("%.4f", ce) + ", BLEU-4 " + fmt("%.2f", bleu4) + ", runtime " + fmt("%.0f", secs) + " s");
  return o;
}

// 8. Bit-identical reruns and checkpoint round trips.
Outcome determinism_criterion() {
  Outcome o;
  Config cfg = config_file("overfit.json");
  cfg.train.pretrain_epochs = 3;
  cfg.train.stage1_epochs = 2;
  cfg.train.stage2_epochs = 2;
  cfg.corpus.dev = 4;
  const Corpus corpus = generate_corpus(cfg.corpus);
  const auto p1 = pretrain(cfg, corpus), p2 = pretrain(cfg, corpus);
  o.require(p1.log == p2.log, "identical pre-training logs");
  const auto f1 = finetune(cfg, corpus, &p1.best), f2 = finetune(cfg, corpus, &p2.best);
  o.require(f1.log == f2.log, "identical fine-tuning logs");
  const auto dir = std::filesystem::temp_directory_path() / "hialign_acceptance";
  std::filesystem::create_directories(dir);
  bool identical = true;
  for (const auto* ck : {&p1.best, &f1.best}) {
    save_checkpoint(*ck, dir / "a.ckpt");
    save_checkpoint(load_checkpoint(dir / "a.ckpt"), dir / "b.ckpt");
    auto slurp = [](const std::filesystem::path& p) {
      std::ifstream in(p, std::ios::binary);
      std::stringstream ss;
      ss << in.rdbuf();
      return ss.str();
    };
    identical = identical && slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt") &&
                slurp(dir / "a.ckpt") == serialize_checkpoint(*ck);
  }
  std::filesystem::remove_all(dir);
  o.require(identical, "checkpoint save/load/save byte-identical");
  o.note(std::to_string(p1.log.size() + f1.log.size()) + " log lines compared");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradcheck of all losses", gradcheck_criterion},
      {"localization softmax invariants", localization_criterion},
      {"contrastive closed forms", contrastive_criterion},
      {"BLEU/ROUGE-L oracles", metrics_criterion},
      {"mechanism identities", mechanism_criterion},
      {"lambda ablation trend", ablation_criterion},
      {"10-sample memorization", overfit_criterion},
      {"determinism", determinism_criterion},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.note(std::string("exception: ") + e.what());
    }
    failed += !o.pass;
    std::printf("[%s] %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
