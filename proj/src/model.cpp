#include "ulab/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "ulab/kernels.hpp"

namespace ulab {

void ModelConfig::validate() const {
  require(n_layers >= 1, errc::validation, "n_layers must be >= 1");
  require(d_model >= 1 && n_heads >= 1, errc::validation, "d_model and n_heads must be >= 1");
  require(d_model % n_heads == 0, errc::validation, "d_model must be divisible by n_heads");
  require(d_ff >= 1, errc::validation, "d_ff must be >= 1");
  require(vocab_size >= 2, errc::validation, "vocab_size must be >= 2");
  require(max_positions == 3, errc::validation, "sequences are exactly three tokens long");
}

bool ModelConfig::same_shape(const ModelConfig& o) const {
  return n_layers == o.n_layers && d_model == o.d_model && n_heads == o.n_heads &&
         d_ff == o.d_ff && vocab_size == o.vocab_size && max_positions == o.max_positions;
}

ParamLayout::ParamLayout(const ModelConfig& cfg) {
  const int d = cfg.d_model, dff = cfg.d_ff, v = cfg.vocab_size;
  auto push = [&](const std::string& name, std::vector<int> shape) -> size_t {
    size_t count = 1;
    for (int s : shape) count *= static_cast<size_t>(s);
    const size_t off = total_;
    specs_.push_back({name, std::move(shape), off, count});
    by_name_[name] = specs_.size() - 1;
    total_ += count;
    return off;
  };

  wte = push("wte", {v, d});
  wpe = push("wpe", {cfg.max_positions, d});
  layer.resize(cfg.n_layers);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string pre = "layers." + std::to_string(l) + ".";
    PerLayer& L = layer[l];
    L.ln1_g = push(pre + "ln1.gamma", {d});
    L.ln1_b = push(pre + "ln1.beta", {d});
    L.wqkv = push(pre + "attn.wqkv", {d, 3 * d});
    L.bqkv = push(pre + "attn.bqkv", {3 * d});
    L.wo = push(pre + "attn.wo", {d, d});
    L.bo = push(pre + "attn.bo", {d});
    L.ln2_g = push(pre + "ln2.gamma", {d});
    L.ln2_b = push(pre + "ln2.beta", {d});
    L.w1 = push(pre + "ffn.w1", {d, dff});
    L.b1 = push(pre + "ffn.b1", {dff});
    L.w2 = push(pre + "ffn.w2", {dff, d});
    L.b2 = push(pre + "ffn.b2", {d});
  }
  lnf_g = push("lnf.gamma", {d});
  lnf_b = push("lnf.beta", {d});
}

const ParamLayout::TensorSpec& ParamLayout::spec(const std::string& name) const {
  auto it = by_name_.find(name);
  require(it != by_name_.end(), errc::validation, "unknown tensor: " + name);
  return specs_[it->second];
}

size_t param_count(const ModelConfig& cfg) { return ParamLayout(cfg).total(); }

template <typename T>
ModelT<T> init_model(const ModelConfig& cfg) {
  cfg.validate();
  ModelT<T> m;
  m.config = cfg;
  m.layout = ParamLayout(cfg);
  m.params.assign(m.layout.total(), T(0));

  auto rng = make_rng(cfg.seed);
  auto fill_normal = [&](size_t off, size_t count) {
    T* p = m.params.data() + off;
    for (size_t i = 0; i < count; ++i) p[i] = static_cast<T>(rng.normal() * 0.02);
  };
  auto fill_ones = [&](size_t off, size_t count) {
    std::fill_n(m.params.data() + off, count, T(1));
  };

  const int d = cfg.d_model, dff = cfg.d_ff;
  fill_normal(m.layout.wte, static_cast<size_t>(cfg.vocab_size) * d);
  fill_normal(m.layout.wpe, static_cast<size_t>(cfg.max_positions) * d);
  for (const auto& L : m.layout.layer) {
    fill_ones(L.ln1_g, d);
    fill_normal(L.wqkv, static_cast<size_t>(d) * 3 * d);
    fill_normal(L.wo, static_cast<size_t>(d) * d);
    fill_ones(L.ln2_g, d);
    fill_normal(L.w1, static_cast<size_t>(d) * dff);
    fill_normal(L.w2, static_cast<size_t>(dff) * d);
  }
  fill_ones(m.layout.lnf_g, d);
  return m;
}

std::string to_string(Site s) {
  switch (s) {
    case Site::residual: return "residual";
    case Site::attn: return "attn";
    case Site::ffn: return "ffn";
  }
  return "?";
}

Site site_from_string(const std::string& s) {
  if (s == "residual") return Site::residual;
  if (s == "attn") return Site::attn;
  if (s == "ffn") return Site::ffn;
  fail(errc::validation, "unknown site: " + s);
}

template <typename T>
void StateCapture<T>::resize(int L, int T_in, int d_model) {
  n_layers = L;
  seq_len = T_in;
  d = d_model;
  const size_t n = static_cast<size_t>(L) * T_in * d_model;
  residual.assign(n, T(0));
  attn.assign(n, T(0));
  ffn.assign(n, T(0));
}

template <typename T>
T* StateCapture<T>::at(Site site, int layer, int pos) {
  auto& buf = site == Site::residual ? residual : (site == Site::attn ? attn : ffn);
  return buf.data() + (static_cast<size_t>(layer) * seq_len + pos) * d;
}

template <typename T>
const T* StateCapture<T>::at(Site site, int layer, int pos) const {
  return const_cast<StateCapture<T>*>(this)->at(site, layer, pos);
}

template <typename T>
void BatchCache<T>::resize(const ModelConfig& cfg, int B_, int T_in_, bool logits_all_) {
  B = B_;
  T_in = T_in_;
  logits_all = logits_all_;
  const size_t N = static_cast<size_t>(B) * T_in;
  const size_t d = cfg.d_model, dff = cfg.d_ff;
  emb.resize(N * d);
  layers.resize(cfg.n_layers);
  for (auto& L : layers) {
    L.ln1_out.resize(N * d);
    L.ln1_mean.resize(N);
    L.ln1_rstd.resize(N);
    L.qkv.resize(N * 3 * d);
    L.att_probs.resize(static_cast<size_t>(B) * cfg.n_heads * T_in * T_in);
    L.ctx.resize(N * d);
    L.attn_out.resize(N * d);
    L.res1.resize(N * d);
    L.ln2_out.resize(N * d);
    L.ln2_mean.resize(N);
    L.ln2_rstd.resize(N);
    L.ffn_pre.resize(N * dff);
    L.ffn_act.resize(N * dff);
    L.ffn_out.resize(N * d);
    L.out.resize(N * d);
  }
  lnf_out.resize(N * d);
  lnf_mean.resize(N);
  lnf_rstd.resize(N);
  head_in.resize(static_cast<size_t>(logits_all ? N : B) * d);
  logits.resize(static_cast<size_t>(logit_rows()) * cfg.vocab_size);
}

namespace {

template <typename T>
void add_bias_rows(T* x, const T* bias, int rows, int d) {
  for (int r = 0; r < rows; ++r) kernels::add(x + static_cast<size_t>(r) * d, bias, d);
}

// acc[d] += column sums over rows
template <typename T>
void accumulate_col_sums(T* acc, const T* rows, int nrows, int d) {
  for (int r = 0; r < nrows; ++r) kernels::add(acc, rows + static_cast<size_t>(r) * d, d);
}

template <typename T>
void apply_overrides(const Hooks<T>* hooks, Site site, int layer, T* buf, int B, int T_in,
                     int d) {
  if (hooks == nullptr) return;
  for (const auto& ov : hooks->overrides) {
    if (ov.site != site || ov.layer != layer) continue;
    require(ov.pos >= 0 && ov.pos < T_in, errc::validation, "override position out of range");
    for (int b = 0; b < B; ++b)
      std::copy_n(ov.value, d, buf + (static_cast<size_t>(b) * T_in + ov.pos) * d);
  }
}

template <typename T>
void capture_site(const Hooks<T>* hooks, Site site, int layer, const T* buf, int T_in, int d) {
  if (hooks == nullptr || hooks->capture == nullptr) return;
  for (int t = 0; t < T_in; ++t)
    std::copy_n(buf + static_cast<size_t>(t) * d, d, hooks->capture->at(site, layer, t));
}

template <typename T>
void attention_forward(const ModelT<T>& m, BatchCache<T>& cache, int l) {
  const int B = cache.B, T_in = cache.T_in;
  const int d = m.config.d_model, H = m.config.n_heads, hd = m.config.head_dim();
  const T scale = static_cast<T>(1.0 / std::sqrt(double(hd)));
  auto& L = cache.layers[l];
  T srow[3];  // T_in <= 3
  for (int b = 0; b < B; ++b) {
    for (int h = 0; h < H; ++h) {
      for (int t = 0; t < T_in; ++t) {
        const T* q = L.qkv.data() + (static_cast<size_t>(b) * T_in + t) * 3 * d + h * hd;
        for (int u = 0; u <= t; ++u) {
          const T* k = L.qkv.data() + (static_cast<size_t>(b) * T_in + u) * 3 * d + d + h * hd;
          srow[u] = kernels::dot(q, k, hd) * scale;
        }
        T mx = srow[0];
        for (int u = 1; u <= t; ++u) mx = std::max(mx, srow[u]);
        T sum = 0;
        for (int u = 0; u <= t; ++u) {
          srow[u] = std::exp(srow[u] - mx);
          sum += srow[u];
        }
        T* prow =
            L.att_probs.data() + ((static_cast<size_t>(b) * H + h) * T_in + t) * T_in;
        for (int u = 0; u <= t; ++u) prow[u] = srow[u] / sum;
        for (int u = t + 1; u < T_in; ++u) prow[u] = T(0);

        T* ctx = L.ctx.data() + (static_cast<size_t>(b) * T_in + t) * d + h * hd;
        std::fill_n(ctx, hd, T(0));
        for (int u = 0; u <= t; ++u) {
          const T* v =
              L.qkv.data() + (static_cast<size_t>(b) * T_in + u) * 3 * d + 2 * d + h * hd;
          const T w = prow[u];
          for (int j = 0; j < hd; ++j) ctx[j] += w * v[j];
        }
      }
    }
  }
}

template <typename T>
void attention_backward(const ModelT<T>& m, const BatchCache<T>& cache, int l, const T* g_ctx,
                        T* g_qkv) {
  const int B = cache.B, T_in = cache.T_in;
  const int d = m.config.d_model, H = m.config.n_heads, hd = m.config.head_dim();
  const T scale = static_cast<T>(1.0 / std::sqrt(double(hd)));
  const auto& L = cache.layers[l];
  T dp[3], ds[3];
  for (int b = 0; b < B; ++b) {
    for (int h = 0; h < H; ++h) {
      for (int t = 0; t < T_in; ++t) {
        const T* dctx = g_ctx + (static_cast<size_t>(b) * T_in + t) * d + h * hd;
        const T* prow =
            L.att_probs.data() + ((static_cast<size_t>(b) * H + h) * T_in + t) * T_in;
        const T* q = L.qkv.data() + (static_cast<size_t>(b) * T_in + t) * 3 * d + h * hd;
        T* dq = g_qkv + (static_cast<size_t>(b) * T_in + t) * 3 * d + h * hd;

        T dot_pd = 0;
        for (int u = 0; u <= t; ++u) {
          const T* v =
              L.qkv.data() + (static_cast<size_t>(b) * T_in + u) * 3 * d + 2 * d + h * hd;
          dp[u] = kernels::dot(dctx, v, hd);
          dot_pd += prow[u] * dp[u];
        }
        for (int u = 0; u <= t; ++u) {
          ds[u] = prow[u] * (dp[u] - dot_pd);
          const T* k = L.qkv.data() + (static_cast<size_t>(b) * T_in + u) * 3 * d + d + h * hd;
          T* dk = g_qkv + (static_cast<size_t>(b) * T_in + u) * 3 * d + d + h * hd;
          T* dv = g_qkv + (static_cast<size_t>(b) * T_in + u) * 3 * d + 2 * d + h * hd;
          const T w = prow[u];
          const T dscaled = ds[u] * scale;
          for (int j = 0; j < hd; ++j) {
            dq[j] += dscaled * k[j];
            dk[j] += dscaled * q[j];
            dv[j] += w * dctx[j];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
void forward_batch(const ModelT<T>& m, const int* tokens, int B, int T_in, BatchCache<T>& cache,
                   bool logits_all, const Hooks<T>* hooks) {
  const ModelConfig& cfg = m.config;
  require(B >= 1, errc::validation, "empty batch");
  require(T_in >= 1 && T_in <= cfg.max_positions, errc::validation,
          "sequence length must be between 1 and max_positions");
  const int d = cfg.d_model, dff = cfg.d_ff, V = cfg.vocab_size;
  const int N = B * T_in;
  for (int i = 0; i < N; ++i)
    require(tokens[i] >= 0 && tokens[i] < V, errc::validation, "token id out of vocabulary");

  cache.resize(cfg, B, T_in, logits_all);

  for (int b = 0; b < B; ++b) {
    for (int t = 0; t < T_in; ++t) {
      const size_t row = static_cast<size_t>(b) * T_in + t;
      const T* te = m.p(m.layout.wte) + static_cast<size_t>(tokens[row]) * d;
      const T* pe = m.p(m.layout.wpe) + static_cast<size_t>(t) * d;
      T* e = cache.emb.data() + row * d;
      for (int i = 0; i < d; ++i) e[i] = te[i] + pe[i];
    }
  }
  if (hooks != nullptr && hooks->emb_add != nullptr)
    kernels::add(cache.emb.data(), hooks->emb_add, static_cast<size_t>(N) * d);

  const T* x = cache.emb.data();
  for (int l = 0; l < cfg.n_layers; ++l) {
    auto& L = cache.layers[l];
    const auto& P = m.layout.layer[l];

    kernels::layernorm_fwd(x, m.p(P.ln1_g), m.p(P.ln1_b), L.ln1_out.data(), L.ln1_mean.data(),
                           L.ln1_rstd.data(), N, d);
    kernels::gemm<T>(false, false, N, 3 * d, d, T(1), L.ln1_out.data(), d, m.p(P.wqkv), 3 * d,
                     T(0), L.qkv.data(), 3 * d);
    add_bias_rows(L.qkv.data(), m.p(P.bqkv), N, 3 * d);

    attention_forward(m, cache, l);

    kernels::gemm<T>(false, false, N, d, d, T(1), L.ctx.data(), d, m.p(P.wo), d, T(0),
                     L.attn_out.data(), d);
    add_bias_rows(L.attn_out.data(), m.p(P.bo), N, d);
    apply_overrides(hooks, Site::attn, l, L.attn_out.data(), B, T_in, d);
    capture_site(hooks, Site::attn, l, L.attn_out.data(), T_in, d);

    for (size_t i = 0; i < static_cast<size_t>(N) * d; ++i)
      L.res1[i] = x[i] + L.attn_out[i];

    kernels::layernorm_fwd(L.res1.data(), m.p(P.ln2_g), m.p(P.ln2_b), L.ln2_out.data(),
                           L.ln2_mean.data(), L.ln2_rstd.data(), N, d);
    kernels::gemm<T>(false, false, N, dff, d, T(1), L.ln2_out.data(), d, m.p(P.w1), dff, T(0),
                     L.ffn_pre.data(), dff);
    add_bias_rows(L.ffn_pre.data(), m.p(P.b1), N, dff);
    kernels::gelu_fwd(L.ffn_pre.data(), L.ffn_act.data(), static_cast<size_t>(N) * dff);
    kernels::gemm<T>(false, false, N, d, dff, T(1), L.ffn_act.data(), dff, m.p(P.w2), d, T(0),
                     L.ffn_out.data(), d);
    add_bias_rows(L.ffn_out.data(), m.p(P.b2), N, d);
    apply_overrides(hooks, Site::ffn, l, L.ffn_out.data(), B, T_in, d);
    capture_site(hooks, Site::ffn, l, L.ffn_out.data(), T_in, d);

    for (size_t i = 0; i < static_cast<size_t>(N) * d; ++i)
      L.out[i] = L.res1[i] + L.ffn_out[i];
    apply_overrides(hooks, Site::residual, l, L.out.data(), B, T_in, d);
    capture_site(hooks, Site::residual, l, L.out.data(), T_in, d);

    x = L.out.data();
  }

  kernels::layernorm_fwd(x, m.p(m.layout.lnf_g), m.p(m.layout.lnf_b), cache.lnf_out.data(),
                         cache.lnf_mean.data(), cache.lnf_rstd.data(), N, d);

  const int rows = cache.logit_rows();
  if (logits_all) {
    std::copy_n(cache.lnf_out.data(), static_cast<size_t>(N) * d, cache.head_in.data());
  } else {
    for (int b = 0; b < B; ++b)
      std::copy_n(cache.lnf_out.data() + (static_cast<size_t>(b) * T_in + T_in - 1) * d, d,
                  cache.head_in.data() + static_cast<size_t>(b) * d);
  }
  // tied output head: logits = head_in * wte^T
  kernels::gemm<T>(false, true, rows, V, d, T(1), cache.head_in.data(), d, m.p(m.layout.wte), d,
                   T(0), cache.logits.data(), V);
}

template <typename T>
T batch_loss(const ModelT<T>& m, const BatchCache<T>& cache, const int* labels) {
  const int V = m.config.vocab_size;
  const int B = cache.B, T_in = cache.T_in;
  double total = 0.0;
  int count = 0;
  std::vector<T> prow(V);
  for (int b = 0; b < B; ++b) {
    for (int t = 0; t < T_in; ++t) {
      const int label = labels[static_cast<size_t>(b) * T_in + t];
      if (label < 0) continue;
      require(label < V, errc::validation, "label out of vocabulary");
      require(cache.logits_all || t == T_in - 1, errc::validation,
              "loss requested at a position without logits");
      const size_t row = cache.logits_all ? static_cast<size_t>(b) * T_in + t
                                          : static_cast<size_t>(b);
      kernels::softmax_rows(cache.logits.data() + row * V, prow.data(), 1, V);
      total += -std::log(std::max(double(prow[label]), 1e-300));
      count += 1;
    }
  }
  require(count > 0, errc::validation, "no labeled positions");
  return static_cast<T>(total / count);
}

template <typename T>
struct BwdScratch {
  std::vector<T> probs, g_head, g_x, g_res1, g_ffn_out, g_ffn_act, g_ffn_pre, g_ln2, g_attn_out,
      g_ctx, g_qkv, g_ln1, g_prev;
  void resize(const ModelConfig& cfg, int B, int T_in, int rows) {
    const size_t N = static_cast<size_t>(B) * T_in;
    const size_t d = cfg.d_model, dff = cfg.d_ff;
    probs.resize(static_cast<size_t>(rows) * cfg.vocab_size);
    g_head.resize(static_cast<size_t>(rows) * d);
    g_x.resize(N * d);
    g_res1.resize(N * d);
    g_ffn_out.resize(N * d);
    g_ffn_act.resize(N * dff);
    g_ffn_pre.resize(N * dff);
    g_ln2.resize(N * d);
    g_attn_out.resize(N * d);
    g_ctx.resize(N * d);
    g_qkv.resize(N * 3 * d);
    g_ln1.resize(N * d);
    g_prev.resize(N * d);
  }
};

template <typename T>
T backward_batch(const ModelT<T>& m, const int* tokens, int B, int T_in,
                 const BatchCache<T>& cache, const int* labels, std::vector<T>& dparams,
                 const Hooks<T>* hooks, T* override_grad, int bwd_stop_layer) {
  const ModelConfig& cfg = m.config;
  const int d = cfg.d_model, dff = cfg.d_ff, V = cfg.vocab_size;
  const int N = B * T_in;
  const int rows = cache.logit_rows();
  require(dparams.size() == m.params.size(), errc::validation, "gradient buffer size mismatch");

  static thread_local BwdScratch<T> ws;
  ws.resize(cfg, B, T_in, rows);

  kernels::softmax_rows(cache.logits.data(), ws.probs.data(), rows, V);
  int count = 0;
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < T_in; ++t) {
      const int label = labels[static_cast<size_t>(b) * T_in + t];
      if (label < 0) continue;
      require(label < V, errc::validation, "label out of vocabulary");
      require(cache.logits_all || t == T_in - 1, errc::validation,
              "loss requested at a position without logits");
      count += 1;
    }
  require(count > 0, errc::validation, "no labeled positions");
  const T inv_count = T(1) / static_cast<T>(count);

  // turn probabilities into dlogits in place
  double total = 0.0;
  for (int r = 0; r < rows; ++r) {
    T* prow = ws.probs.data() + static_cast<size_t>(r) * V;
    const int b = cache.logits_all ? r / T_in : r;
    const int t = cache.logits_all ? r % T_in : T_in - 1;
    const int label = labels[static_cast<size_t>(b) * T_in + t];
    if (label < 0) {
      std::fill_n(prow, V, T(0));
      continue;
    }
    total += -std::log(std::max(double(prow[label]), 1e-300));
    for (int i = 0; i < V; ++i) prow[i] *= inv_count;
    prow[label] -= inv_count;
  }
  const T loss = static_cast<T>(total / count);

  // head: dwte += dlogits^T * head_in ; g_head = dlogits * wte
  kernels::gemm<T>(true, false, V, d, rows, T(1), ws.probs.data(), V, cache.head_in.data(), d,
                   T(1), dparams.data() + m.layout.wte, d);
  kernels::gemm<T>(false, false, rows, d, V, T(1), ws.probs.data(), V, m.p(m.layout.wte), d,
                   T(0), ws.g_head.data(), d);

  std::vector<T>& g_lnf = ws.g_x;
  if (cache.logits_all) {
    std::copy_n(ws.g_head.data(), static_cast<size_t>(N) * d, g_lnf.data());
  } else {
    std::fill(g_lnf.begin(), g_lnf.end(), T(0));
    for (int b = 0; b < B; ++b)
      std::copy_n(ws.g_head.data() + static_cast<size_t>(b) * d, d,
                  g_lnf.data() + (static_cast<size_t>(b) * T_in + T_in - 1) * d);
  }

  const T* last_out = cache.layers[cfg.n_layers - 1].out.data();
  kernels::layernorm_bwd(last_out, m.p(m.layout.lnf_g), cache.lnf_mean.data(),
                         cache.lnf_rstd.data(), g_lnf.data(), ws.g_prev.data(),
                         dparams.data() + m.layout.lnf_g, dparams.data() + m.layout.lnf_b, N, d);

  auto zero_override_rows = [&](Site site, int l, std::vector<T>& grad) {
    if (hooks == nullptr) return;
    for (const auto& ov : hooks->overrides) {
      if (ov.site != site || ov.layer != l) continue;
      for (int b = 0; b < B; ++b) {
        T* row = grad.data() + (static_cast<size_t>(b) * T_in + ov.pos) * d;
        if (override_grad != nullptr) kernels::add(override_grad, row, d);
        std::fill_n(row, d, T(0));
      }
    }
  };

  // ws.g_prev holds the gradient flowing into the top layer's output.
  for (int l = cfg.n_layers - 1; l >= bwd_stop_layer; --l) {
    const auto& L = cache.layers[l];
    const auto& P = m.layout.layer[l];
    std::vector<T>& g_out = ws.g_prev;
    zero_override_rows(Site::residual, l, g_out);

    // out = res1 + ffn_out
    std::copy(g_out.begin(), g_out.end(), ws.g_ffn_out.begin());
    zero_override_rows(Site::ffn, l, ws.g_ffn_out);
    std::copy(g_out.begin(), g_out.end(), ws.g_res1.begin());

    // ffn branch
    accumulate_col_sums(dparams.data() + P.b2, ws.g_ffn_out.data(), N, d);
    kernels::gemm<T>(true, false, dff, d, N, T(1), L.ffn_act.data(), dff, ws.g_ffn_out.data(), d,
                     T(1), dparams.data() + P.w2, d);
    kernels::gemm<T>(false, true, N, dff, d, T(1), ws.g_ffn_out.data(), d, m.p(P.w2), d, T(0),
                     ws.g_ffn_act.data(), dff);
    kernels::gelu_bwd(L.ffn_pre.data(), ws.g_ffn_act.data(), ws.g_ffn_pre.data(),
                      static_cast<size_t>(N) * dff);
    accumulate_col_sums(dparams.data() + P.b1, ws.g_ffn_pre.data(), N, dff);
    kernels::gemm<T>(true, false, d, dff, N, T(1), L.ln2_out.data(), d, ws.g_ffn_pre.data(), dff,
                     T(1), dparams.data() + P.w1, dff);
    kernels::gemm<T>(false, true, N, d, dff, T(1), ws.g_ffn_pre.data(), dff, m.p(P.w1), dff,
                     T(0), ws.g_ln2.data(), d);
    kernels::layernorm_bwd(L.res1.data(), m.p(P.ln2_g), L.ln2_mean.data(), L.ln2_rstd.data(),
                           ws.g_ln2.data(), ws.g_x.data(), dparams.data() + P.ln2_g,
                           dparams.data() + P.ln2_b, N, d);
    kernels::add(ws.g_res1.data(), ws.g_x.data(), static_cast<size_t>(N) * d);

    // attention branch: res1 = x + attn_out
    std::copy(ws.g_res1.begin(), ws.g_res1.end(), ws.g_attn_out.begin());
    zero_override_rows(Site::attn, l, ws.g_attn_out);
    accumulate_col_sums(dparams.data() + P.bo, ws.g_attn_out.data(), N, d);
    kernels::gemm<T>(true, false, d, d, N, T(1), L.ctx.data(), d, ws.g_attn_out.data(), d, T(1),
                     dparams.data() + P.wo, d);
    kernels::gemm<T>(false, true, N, d, d, T(1), ws.g_attn_out.data(), d, m.p(P.wo), d, T(0),
                     ws.g_ctx.data(), d);

    std::fill(ws.g_qkv.begin(), ws.g_qkv.end(), T(0));
    attention_backward(m, cache, l, ws.g_ctx.data(), ws.g_qkv.data());

    accumulate_col_sums(dparams.data() + P.bqkv, ws.g_qkv.data(), N, 3 * d);
    kernels::gemm<T>(true, false, d, 3 * d, N, T(1), L.ln1_out.data(), d, ws.g_qkv.data(), 3 * d,
                     T(1), dparams.data() + P.wqkv, 3 * d);
    kernels::gemm<T>(false, true, N, d, 3 * d, T(1), ws.g_qkv.data(), 3 * d, m.p(P.wqkv), 3 * d,
                     T(0), ws.g_ln1.data(), d);

    const T* x_in = l == 0 ? cache.emb.data() : cache.layers[l - 1].out.data();
    kernels::layernorm_bwd(x_in, m.p(P.ln1_g), L.ln1_mean.data(), L.ln1_rstd.data(),
                           ws.g_ln1.data(), ws.g_x.data(), dparams.data() + P.ln1_g,
                           dparams.data() + P.ln1_b, N, d);
    for (size_t i = 0; i < static_cast<size_t>(N) * d; ++i)
      ws.g_prev[i] = ws.g_res1[i] + ws.g_x[i];
  }

  if (bwd_stop_layer == 0) {
    // embedding scatter (tied with the head, accumulated into the same rows)
    for (int b = 0; b < B; ++b)
      for (int t = 0; t < T_in; ++t) {
        const size_t row = static_cast<size_t>(b) * T_in + t;
        const T* g = ws.g_prev.data() + row * d;
        kernels::add(dparams.data() + m.layout.wte + static_cast<size_t>(tokens[row]) * d, g, d);
        kernels::add(dparams.data() + m.layout.wpe + static_cast<size_t>(t) * d, g, d);
      }
  }

  return loss;
}

template <typename T>
std::vector<T> forward_distributions(const ModelT<T>& m, std::span<const int> tokens) {
  require(!tokens.empty() && static_cast<int>(tokens.size()) <= m.config.max_positions,
          errc::validation, "sequence length must be between 1 and max_positions");
  BatchCache<T> cache;
  forward_batch(m, tokens.data(), 1, static_cast<int>(tokens.size()), cache, true);
  std::vector<T> dist(cache.logits.size());
  kernels::softmax_rows(cache.logits.data(), dist.data(), cache.logit_rows(),
                        m.config.vocab_size);
  return dist;
}

std::vector<int> predict_last_argmax(const Model& m, const int* tokens, int B, int T_in,
                                     BatchCache<float>& cache) {
  forward_batch(m, tokens, B, T_in, cache, false);
  const int V = m.config.vocab_size;
  std::vector<int> out(B);
  for (int b = 0; b < B; ++b) {
    const float* row = cache.logits.data() + static_cast<size_t>(b) * V;
    int best = 0;
    for (int i = 1; i < V; ++i)
      if (row[i] > row[best]) best = i;
    out[b] = best;
  }
  return out;
}

template ModelT<float> init_model<float>(const ModelConfig&);
template ModelT<double> init_model<double>(const ModelConfig&);
template struct StateCapture<float>;
template struct StateCapture<double>;
template struct BatchCache<float>;
template struct BatchCache<double>;
template void forward_batch<float>(const ModelT<float>&, const int*, int, int,
                                   BatchCache<float>&, bool, const Hooks<float>*);
template void forward_batch<double>(const ModelT<double>&, const int*, int, int,
                                    BatchCache<double>&, bool, const Hooks<double>*);
template float batch_loss<float>(const ModelT<float>&, const BatchCache<float>&, const int*);
template double batch_loss<double>(const ModelT<double>&, const BatchCache<double>&, const int*);
template float backward_batch<float>(const ModelT<float>&, const int*, int, int,
                                     const BatchCache<float>&, const int*, std::vector<float>&,
                                     const Hooks<float>*, float*, int);
template double backward_batch<double>(const ModelT<double>&, const int*, int, int,
                                       const BatchCache<double>&, const int*,
                                       std::vector<double>&, const Hooks<double>*, double*, int);
template std::vector<float> forward_distributions<float>(const ModelT<float>&,
                                                         std::span<const int>);
template std::vector<double> forward_distributions<double>(const ModelT<double>&,
                                                           std::span<const int>);

}  // namespace ulab
