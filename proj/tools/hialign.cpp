// SPDX-License-Identifier: Apache-2.0
// Command-line front end: corpus generation, training, decoding, evaluation.
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "hialign/errors.hpp"
#include "hialign/hfat.hpp"
#include "hialign/trainer.hpp"

using namespace hialign;
namespace fs = std::filesystem;

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  return os;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hialign: gloss-free sign language translation toolkit"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_path, ckpt_path, features_path, init_path, split = "dev";
  double lambda = -1.0;
  bool random_init = false;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic corpus");
  gen->add_option("--config", config_path, "JSON config")->required();
  gen->add_option("--out", out_path, "Output directory")->required();

  auto* pre = app.add_subcommand("pretrain", "Pseudo-gloss and contrastive pre-training");
  pre->add_option("--config", config_path, "JSON config")->required();
  pre->add_option("--data", data_dir, "Corpus directory or manifest")->required();
  pre->add_option("--out", out_path, "Run directory")->required();
  pre->add_option("--lambda", lambda, "Weight of the pseudo-gloss loss");

  auto* ft = app.add_subcommand("finetune", "Two-stage translation fine-tuning");
  ft->add_option("--config", config_path, "JSON config")->required();
  ft->add_option("--data", data_dir, "Corpus directory or manifest")->required();
  ft->add_option("--out", out_path, "Run directory")->required();
  auto* init_opt = ft->add_option("--init", init_path, "Pre-trained checkpoint");
  auto* rand_opt = ft->add_flag("--random-init", random_init, "Start from random weights");
  init_opt->excludes(rand_opt);

  auto* tr = app.add_subcommand("translate", "Decode one feature file");
  tr->add_option("--ckpt", ckpt_path, "Fine-tuned checkpoint")->required();
  tr->add_option("--features", features_path, "HFAT feature file")->required();

  auto* ev = app.add_subcommand("evaluate", "Score a split");
  ev->add_option("--ckpt", ckpt_path, "Fine-tuned checkpoint")->required();
  ev->add_option("--data", data_dir, "Corpus directory or manifest")->required();
  ev->add_option("--split", split, "Split to score")->check(CLI::IsMember({"dev", "test"}));
  ev->add_option("--out", out_path, "Report path")->required();

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every loss at tiny dimensions");
  gc->add_option("--config", config_path, "JSON config; only the seed and temporal layout are kept");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) {
      const Config cfg = load_config(config_path);
      ensure_dir(out_path);
      save_corpus(generate_corpus(cfg.corpus), out_path);
    } else if (*pre) {
      Config cfg = load_config(config_path);
      if (pre->count("--lambda")) cfg.train.lambda = lambda;
      cfg.validate();
      const Corpus corpus = load_corpus(data_dir);
      ensure_dir(out_path);
      auto log = open_out(fs::path(out_path) / "log.jsonl");
      TrainOptions opt{&log, {}};
      const auto r = pretrain(cfg, corpus, opt);
      save_checkpoint(r.best, fs::path(out_path) / "best.ckpt");
      save_checkpoint(r.last, fs::path(out_path) / "last.ckpt");
    } else if (*ft) {
      if (!random_init && init_path.empty()) throw ContractError("finetune needs --init CKPT or --random-init");
      const Config cfg = load_config(config_path);
      const Corpus corpus = load_corpus(data_dir);
      std::optional<Checkpoint> init;
      if (!random_init) init = load_checkpoint(init_path);
      ensure_dir(out_path);
      auto log = open_out(fs::path(out_path) / "log.jsonl");
      TrainOptions opt{&log, {}};
      const auto r = finetune(cfg, corpus, init ? &*init : nullptr, opt);
      save_checkpoint(r.best, fs::path(out_path) / "best.ckpt");
      save_checkpoint(r.last, fs::path(out_path) / "last.ckpt");
    } else if (*tr) {
      const Checkpoint ckpt = load_checkpoint(ckpt_path);
      std::cout << join_tokens(translate(ckpt, hfat::load(features_path))) << '\n';
    } else if (*ev) {
      const Checkpoint ckpt = load_checkpoint(ckpt_path);
      const Corpus corpus = load_corpus(data_dir);
      std::vector<Tokens> hyps;
      const auto report = evaluate(ckpt, corpus.split(split), &hyps);
      open_out(out_path) << report.to_json() << '\n';
      auto sentences = open_out(out_path + ".sentences.txt");
      for (const auto& h : hyps) sentences << join_tokens(h) << '\n';
      std::cout << report.to_json() << '\n';
    } else if (*gc) {
      const Config cfg = config_path.empty() ? Config{} : load_config(config_path);
      const auto r = run_gradcheck(cfg);
      nlohmann::ordered_json j;
      for (const auto& [name, err] : r.losses) j[name] = err;
      j["passed"] = r.passed;
      std::cout << j.dump(2) << '\n';
      return r.passed ? 0 : 1;
    }
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
