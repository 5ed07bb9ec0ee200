#include <doctest.h>

#include <cmath>

#include "hialign/errors.hpp"
#include "hialign/gradcheck.hpp"
#include "hialign/translation.hpp"
#include "test_util.hpp"

using namespace hialign;
using hialign::testing::random_tensor;
using hialign::testing::weighted_sum;

namespace {

EncoderConfig tiny_config() {
  EncoderConfig c;
  c.hidden = 8;
  c.heads = 2;
  c.ffn = 12;
  c.decoder_layers = 1;
  c.lora_rank = 2;
  c.lora_alpha = 4.0;
  c.lora_dropout = 0.0;
  c.dropout = 0.0;
  return c;
}

}  // namespace

TEST_CASE("token vocab") {
  const auto v = TokenVocab::build({{"b", "a"}, {"c", "a"}});
  CHECK(v.size() == 7);
  CHECK(v.token(TokenVocab::kBos) == "<bos>");
  CHECK(v.id("a") == 4);
  CHECK(v.id("zzz") == TokenVocab::kUnk);
  const std::vector<std::string> sent{"c", "b"};
  const auto ids = v.encode(sent);
  CHECK(ids == std::vector<int>{TokenVocab::kBos, 6, 5, TokenVocab::kEos});
  CHECK(v.decode(ids) == sent);
  const std::vector<int> with_tail{6, TokenVocab::kPad, TokenVocab::kEos, 5};
  CHECK(v.decode(with_tail) == std::vector<std::string>{"c"});
  CHECK(TokenVocab(v.tokens()).tokens() == v.tokens());
}

TEST_CASE("slt_loss") {
  Tape tape;
  const std::vector<int> targets{4, 5, 1};
  CHECK(slt_loss(tape.constant(Tensor({3, 8})), targets).value().item() ==
        doctest::Approx(std::log(8.0)).epsilon(1e-12));
  Tensor onehot({3, 8});
  for (std::size_t i = 0; i < 3; ++i) onehot.at(i, static_cast<std::size_t>(targets[i])) = 40.0;
  CHECK(slt_loss(tape.constant(onehot), targets).value().item() < 1e-12);
  // <pad> targets are ignored.
  Rng rng(1);
  const Tensor logits = random_tensor({4, 8}, rng);
  const std::vector<int> padded{4, 5, TokenVocab::kPad, TokenVocab::kPad};
  double want = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j < 8; ++j) z += std::exp(logits.at(i, j));
    want += std::log(z) - logits.at(i, static_cast<std::size_t>(padded[i]));
  }
  CHECK(slt_loss(tape.constant(logits), padded).value().item() == doctest::Approx(want / 2).epsilon(1e-12));
}

TEST_CASE("teacher forcing split") {
  const std::vector<int> seq{0, 7, 8, 1};
  const auto tf = teacher_forcing(seq);
  CHECK(tf.inputs == std::vector<int>{0, 7, 8});
  CHECK(tf.targets == std::vector<int>{7, 8, 1});
  const std::vector<int> one{0};
  CHECK_THROWS_AS(teacher_forcing(one), ContractError);
}

TEST_CASE("decoder") {
  const auto cfg = tiny_config();
  Rng rng(2);
  ParameterStore store;
  init_decoder(store, cfg, 9, rng);
  for (const auto& n : store.names())
    if (n.ends_with(".lora_b"))
      for (auto& v : store.value(n).storage()) v = 0.3 * rng.normal();
  const Tensor memory = random_tensor({3, 8}, rng);
  const std::vector<int> a{0, 4, 5, 6, 7}, b{0, 4, 5, 8, 2};

  SUBCASE("causality") {
    Tape tape;
    Forward f{tape, store, false, nullptr};
    const Tensor la = decode_teacher_forced(f, cfg, tape.constant(memory), a).value();
    const Tensor lb = decode_teacher_forced(f, cfg, tape.constant(memory), b).value();
    CHECK(la.shape() == Shape{5, 9});
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t v = 0; v < 9; ++v) CHECK(la.at(j, v) == lb.at(j, v));
    double later = 0.0;
    for (std::size_t v = 0; v < 9; ++v) later = std::max(later, std::abs(la.at(3, v) - lb.at(3, v)));
    CHECK(later > 0.0);
  }
  SUBCASE("contract errors") {
    Tape tape;
    Forward f{tape, store, false, nullptr};
    const std::vector<int> empty, no_bos{4, 5};
    CHECK_THROWS_AS(decode_teacher_forced(f, cfg, tape.constant(memory), empty), ContractError);
    CHECK_THROWS_AS(decode_teacher_forced(f, cfg, tape.constant(memory), no_bos), ContractError);
  }
  SUBCASE("gradcheck") {
    const auto tf = teacher_forcing(a);
    auto report = gradcheck(
        [&](Tape& tape, ParameterStore& ps) {
          Forward f{tape, ps, false, nullptr};
          return slt_loss(decode_teacher_forced(f, cfg, tape.constant(memory), tf.inputs), tf.targets);
        },
        store);
    CHECK(report.passed);
    CHECK(report.max_rel_err <= 1e-4);
  }
  SUBCASE("memory gradient") {
    Tape tape;
    Forward f{tape, store, false, nullptr};
    Var m = tape.leaf(memory);
    tape.backward(weighted_sum(tape, decode_teacher_forced(f, cfg, m, a), 3));
    CHECK(tape.grad(m).max_abs() > 0.0);
  }
}

TEST_CASE("greedy decode") {
  const auto cfg = tiny_config();
  Rng rng(3);
  ParameterStore store;
  init_decoder(store, cfg, 9, rng);
  const Tensor memory = random_tensor({4, 8}, rng);
  auto& head_w = store.value("decoder.head.weight");
  auto& head_b = store.value("decoder.head.bias");

  SUBCASE("eos-favoring model") {
    for (auto& v : head_w.storage()) v = 0.0;
    head_b[TokenVocab::kEos] = 5.0;
    CHECK(greedy_decode(store, cfg, memory, 10) == std::vector<int>{TokenVocab::kEos});
  }
  SUBCASE("length cap") {
    for (auto& v : head_w.storage()) v = 0.0;
    head_b[6] = 5.0;
    CHECK(greedy_decode(store, cfg, memory, 3) == std::vector<int>{6, 6, 6});
  }
  SUBCASE("ties go to the lowest id") {
    for (auto& v : head_w.storage()) v = 0.0;
    for (auto& v : head_b.storage()) v = 0.0;
    head_b[7] = 1.0;
    head_b[5] = 1.0;
    CHECK(greedy_decode(store, cfg, memory, 2) == std::vector<int>{5, 5});
  }
  SUBCASE("deterministic and argmax-consistent") {
    const auto out = greedy_decode(store, cfg, memory, 6);
    CHECK(greedy_decode(store, cfg, memory, 6) == out);
    std::vector<int> prefix{TokenVocab::kBos};
    for (int tok : out) {
      Tape tape;
      Forward f{tape, store, false, nullptr};
      const Tensor logits = decode_teacher_forced(f, cfg, tape.constant(memory), prefix).value();
      const std::size_t last = logits.rows() - 1;
      for (std::size_t v = 0; v < logits.cols(); ++v) CHECK(logits.at(last, v) <= logits.at(last, static_cast<std::size_t>(tok)));
      prefix.push_back(tok);
    }
  }
}
