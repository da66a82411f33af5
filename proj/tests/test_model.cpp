#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "test_util.hpp"
#include "ulab/checkpoint.hpp"
#include "ulab/kernels.hpp"
#include "ulab/model.hpp"

using namespace ulab;

namespace {

ModelConfig tiny_config(uint64_t seed = 5) {
  ModelConfig cfg;
  cfg.n_layers = 1;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.vocab_size = 11;
  cfg.seed = seed;
  return cfg;
}

size_t closed_form_param_count(const ModelConfig& c) {
  const size_t d = c.d_model, dff = c.d_ff, v = c.vocab_size, L = c.n_layers;
  const size_t per_layer = 2 * d                 // ln1
                           + d * 3 * d + 3 * d   // qkv
                           + d * d + d           // attn out proj
                           + 2 * d               // ln2
                           + d * dff + dff       // ffn in
                           + dff * d + d;        // ffn out
  return v * d + size_t(c.max_positions) * d + L * per_layer + 2 * d;  // emb + layers + lnf
}

}  // namespace

TEST_CASE("init determinism and parameter count") {
  const auto cfg = tiny_config(77);
  const auto m1 = init_model<float>(cfg);
  const auto m2 = init_model<float>(cfg);
  CHECK(m1.params == m2.params);
  CHECK(m1.params.size() == closed_form_param_count(cfg));
  CHECK(param_count(cfg) == closed_form_param_count(cfg));

  ModelConfig big;
  big.vocab_size = 1251;
  CHECK(param_count(big) == closed_form_param_count(big));

  const auto m3 = init_model<float>(tiny_config(78));
  CHECK(m1.params != m3.params);
}

TEST_CASE("forward distributions normalize and reject bad input") {
  const auto m = init_model<float>(tiny_config());
  const int toks[3] = {1, 2, 3};
  const auto dist = forward_distributions(m, std::span<const int>(toks, 3));
  REQUIRE(dist.size() == size_t(3) * m.config.vocab_size);
  for (int t = 0; t < 3; ++t) {
    double sum = 0;
    for (int v = 0; v < m.config.vocab_size; ++v) sum += dist[size_t(t) * m.config.vocab_size + v];
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }
  const int bad[2] = {0, 11};
  CHECK_THROWS_AS(forward_distributions(m, std::span<const int>(bad, 2)), Error);
  const int four[4] = {0, 1, 2, 3};
  CHECK_THROWS_AS(forward_distributions(m, std::span<const int>(four, 4)), Error);
}

TEST_CASE("causal mask: the third token never changes earlier predictions") {
  const auto m = init_model<float>(tiny_config(3));
  const int a[3] = {4, 7, 1};
  const int b[3] = {4, 7, 9};
  const auto da = forward_distributions(m, std::span<const int>(a, 3));
  const auto db = forward_distributions(m, std::span<const int>(b, 3));
  const int V = m.config.vocab_size;
  for (int i = 0; i < 2 * V; ++i) CHECK(da[i] == db[i]);  // exact equality
  for (int i = 2 * V; i < 3 * V; ++i) {
    if (da[i] != db[i]) return;  // position 3 must differ somewhere
  }
  FAIL("changing the third token changed nothing at position 3");
}

TEST_CASE("uniform-output model has loss ln(vocab)") {
  auto m = init_model<float>(tiny_config());
  // zero all params -> all logits identical -> uniform softmax
  std::fill(m.params.begin(), m.params.end(), 0.0f);
  const int toks[2] = {1, 2};
  const int labels[2] = {-1, 5};
  BatchCache<float> cache;
  forward_batch(m, toks, 1, 2, cache, false);
  const float loss = batch_loss(m, cache, labels);
  CHECK(loss == doctest::Approx(std::log(double(m.config.vocab_size))).epsilon(1e-5));
}

TEST_CASE("autodiff matches central finite differences (f64, tiny config)") {
  ModelConfig cfg = tiny_config(11);
  auto m = init_model<double>(cfg);

  const int B = 3;
  const int tokens[B * 2] = {1, 2, 3, 4, 5, 6};
  const int labels[B * 2] = {-1, 7, -1, 8, -1, 9};

  BatchCache<double> cache;
  forward_batch(m, tokens, B, 2, cache, false);
  std::vector<double> grads(m.params.size(), 0.0);
  backward_batch(m, tokens, B, 2, cache, labels, grads);

  auto loss_at = [&](size_t idx, double delta) {
    auto mm = m;
    mm.params[idx] += delta;
    BatchCache<double> c;
    forward_batch(mm, tokens, B, 2, c, false);
    return double(batch_loss(mm, c, labels));
  };

  auto rng = make_rng(123);
  const double h = 1e-5;
  int checked = 0;
  double max_rel = 0.0;
  while (checked < 20) {
    const size_t idx = rng.below(m.params.size());
    const double fd = (loss_at(idx, h) - loss_at(idx, -h)) / (2 * h);
    const double ad = grads[idx];
    if (std::abs(fd) < 1e-10 && std::abs(ad) < 1e-10) continue;  // skip dead directions
    const double rel = std::abs(ad - fd) / (std::abs(fd) + 1e-8);
    max_rel = std::max(max_rel, rel);
    ++checked;
  }
  CHECK(max_rel <= 1e-4);
}

TEST_CASE("full-LM loss gradients also pass the finite-difference check") {
  ModelConfig cfg = tiny_config(13);
  auto m = init_model<double>(cfg);
  const int tokens[4] = {1, 2, 9, 10};
  const int labels[4] = {2, 7, 10, 3};
  BatchCache<double> cache;
  forward_batch(m, tokens, 2, 2, cache, true);
  std::vector<double> grads(m.params.size(), 0.0);
  const double loss0 = backward_batch(m, tokens, 2, 2, cache, labels, grads);
  CHECK(loss0 == doctest::Approx(double(batch_loss(m, cache, labels))).epsilon(1e-10));

  auto rng = make_rng(321);
  const double h = 1e-5;
  for (int trial = 0; trial < 10; ++trial) {
    const size_t idx = rng.below(m.params.size());
    auto mp = m;
    mp.params[idx] += h;
    auto mn = m;
    mn.params[idx] -= h;
    BatchCache<double> cp, cn;
    forward_batch(mp, tokens, 2, 2, cp, true);
    forward_batch(mn, tokens, 2, 2, cn, true);
    const double fd = (batch_loss(mp, cp, labels) - batch_loss(mn, cn, labels)) / (2 * h);
    if (std::abs(fd) < 1e-10 && std::abs(grads[idx]) < 1e-10) continue;
    CHECK(std::abs(grads[idx] - fd) / (std::abs(fd) + 1e-8) <= 1e-4);
  }
}

TEST_CASE("masked path: positional embedding of unused positions gets no gradient") {
  auto m = init_model<double>(tiny_config(17));
  const int tokens[2] = {1, 2};
  const int labels[2] = {-1, 5};
  BatchCache<double> cache;
  forward_batch(m, tokens, 1, 2, cache, false);
  std::vector<double> grads(m.params.size(), 0.0);
  backward_batch(m, tokens, 1, 2, cache, labels, grads);
  // position 2 (third slot) was never used by this 2-token batch
  const size_t off = m.layout.wpe + size_t(2) * m.config.d_model;
  for (int i = 0; i < m.config.d_model; ++i) CHECK(grads[off + i] == 0.0);
}

TEST_CASE("ffn override replaces the sub-block output and is treated as constant") {
  auto m = init_model<double>(tiny_config(19));
  const int d = m.config.d_model;
  const int tokens[2] = {1, 2};
  const int labels[2] = {-1, 5};

  std::vector<double> v(d);
  for (int i = 0; i < d; ++i) v[i] = 0.1 * (i + 1);
  Hooks<double> hooks;
  hooks.overrides.push_back({Site::ffn, 0, 0, v.data()});

  BatchCache<double> cache;
  forward_batch(m, tokens, 1, 2, cache, false, &hooks);
  for (int i = 0; i < d; ++i) CHECK(cache.layers[0].ffn_out[i] == v[i]);

  std::vector<double> grads(m.params.size(), 0.0);
  std::vector<double> gv(d, 0.0);
  backward_batch(m, tokens, 1, 2, cache, labels, grads, &hooks, gv.data());

  // finite differences on the injected vector itself
  for (int i = 0; i < d; i += 3) {
    const double h = 1e-6;
    auto run = [&](double delta) {
      auto vv = v;
      vv[i] += delta;
      Hooks<double> hk;
      hk.overrides.push_back({Site::ffn, 0, 0, vv.data()});
      BatchCache<double> c;
      forward_batch(m, tokens, 1, 2, c, false, &hk);
      return double(batch_loss(m, c, labels));
    };
    const double fd = (run(h) - run(-h)) / (2 * h);
    CHECK(std::abs(gv[i] - fd) / (std::abs(fd) + 1e-8) < 1e-4);
  }
}

TEST_CASE("checkpoint round-trip is bit identical and validates") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "ulab_ckpt_test";
  fs::remove_all(dir);

  const auto m = init_model<float>(tiny_config(23));
  save_checkpoint(m, dir);
  const Model r = load_checkpoint(dir);
  CHECK(r.params == m.params);
  CHECK(r.config.same_shape(m.config));
  CHECK(r.config.seed == m.config.seed);

  SUBCASE("corrupted payload is rejected naming the tensor") {
    auto payload = read_file(dir / "tensors.bin");
    payload.resize(payload.size() - 8);
    write_file_atomic(dir / "tensors.bin", payload);
    try {
      load_checkpoint(dir);
      FAIL("expected a load failure");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("lnf.beta") != std::string::npos);
    }
  }

  SUBCASE("shape mismatch is rejected") {
    // manifest from a different d_model
    auto other = init_model<float>([] {
      ModelConfig c = tiny_config(23);
      c.d_model = 16;
      c.n_heads = 2;
      c.d_ff = 64;
      return c;
    }());
    const fs::path dir2 = fs::temp_directory_path() / "ulab_ckpt_test2";
    fs::remove_all(dir2);
    save_checkpoint(other, dir2);
    // swap in the wrong payload
    write_file_atomic(dir2 / "tensors.bin", read_file(dir / "tensors.bin"));
    CHECK_THROWS_AS(load_checkpoint(dir2), Error);
    fs::remove_all(dir2);
  }

  fs::remove_all(dir);
}

TEST_CASE("scalar and avx2 forward agree within float tolerance") {
  if (!kernels::avx2_supported()) return;
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.d_model = 32;
  cfg.n_heads = 4;
  cfg.d_ff = 128;
  cfg.vocab_size = 50;
  cfg.seed = 31;
  const auto m = init_model<float>(cfg);
  const int tokens[6] = {1, 2, 3, 10, 20, 30};

  REQUIRE(kernels::set_backend(kernels::Backend::scalar));
  BatchCache<float> c_scalar;
  forward_batch(m, tokens, 3, 2, c_scalar, false);
  auto logits_scalar = c_scalar.logits;

  REQUIRE(kernels::set_backend(kernels::Backend::avx2));
  BatchCache<float> c_avx;
  forward_batch(m, tokens, 3, 2, c_avx, false);

  CHECK(ulab::testing::max_abs_diff(logits_scalar, c_avx.logits) < 1e-4);
}
