#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ulab/common.hpp"

namespace ulab {

struct ModelConfig {
  int n_layers = 6;
  int d_model = 256;
  int n_heads = 4;
  int d_ff = 1024;
  int vocab_size = 0;
  int max_positions = 3;
  uint64_t seed = 0;

  int head_dim() const { return d_model / n_heads; }
  void validate() const;
  bool same_shape(const ModelConfig& o) const;
};

// Flat parameter buffer with named tensor views. Manifest order is the
// construction order below; checkpoints serialize tensors in this order.
class ParamLayout {
 public:
  struct TensorSpec {
    std::string name;
    std::vector<int> shape;
    size_t offset;
    size_t count;
  };

  struct PerLayer {
    size_t ln1_g, ln1_b, wqkv, bqkv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  };

  ParamLayout() = default;
  explicit ParamLayout(const ModelConfig& cfg);

  const std::vector<TensorSpec>& specs() const { return specs_; }
  size_t total() const { return total_; }
  const TensorSpec& spec(const std::string& name) const;

  size_t wte = 0, wpe = 0, lnf_g = 0, lnf_b = 0;
  std::vector<PerLayer> layer;

 private:
  std::vector<TensorSpec> specs_;
  std::unordered_map<std::string, size_t> by_name_;
  size_t total_ = 0;
};

size_t param_count(const ModelConfig& cfg);

template <typename T>
struct ModelT {
  ModelConfig config;
  ParamLayout layout;
  std::vector<T> params;

  T* p(size_t off) { return params.data() + off; }
  const T* p(size_t off) const { return params.data() + off; }
};

using Model = ModelT<float>;

// Deterministic init: weights and embeddings N(0, 0.02), biases and LN beta
// zero, LN gamma one.
template <typename T>
ModelT<T> init_model(const ModelConfig& cfg);

// Hidden-state sites that tracing and editing can observe or replace.
// `attn` and `ffn` are the sub-block outputs before their residual add;
// `residual` is the block output stream h^(l).
enum class Site { residual, attn, ffn };

std::string to_string(Site s);
Site site_from_string(const std::string& s);

template <typename T>
struct Override {
  Site site;
  int layer;
  int pos;
  const T* value;  // [d_model], applied to every batch row
};

// Clean-run state record (row 0 of the batch), indexed [layer, pos].
template <typename T>
struct StateCapture {
  int n_layers = 0, seq_len = 0, d = 0;
  std::vector<T> residual, attn, ffn;

  void resize(int L, int T_in, int d_model);
  T* at(Site site, int layer, int pos);
  const T* at(Site site, int layer, int pos) const;
};

template <typename T>
struct Hooks {
  const T* emb_add = nullptr;  // [B * T_in * d_model], added to embeddings
  std::vector<Override<T>> overrides;
  StateCapture<T>* capture = nullptr;
};

// Activation workspace for one forward/backward. Reused across batches.
template <typename T>
struct BatchCache {
  int B = 0, T_in = 0;
  bool logits_all = false;

  std::vector<T> emb;
  struct Layer {
    std::vector<T> ln1_out, ln1_mean, ln1_rstd;
    std::vector<T> qkv, att_probs, ctx, attn_out;
    std::vector<T> res1;
    std::vector<T> ln2_out, ln2_mean, ln2_rstd;
    std::vector<T> ffn_pre, ffn_act, ffn_out;
    std::vector<T> out;
  };
  std::vector<Layer> layers;
  std::vector<T> lnf_out, lnf_mean, lnf_rstd;
  std::vector<T> head_in;  // last-position rows when logits_all == false
  std::vector<T> logits;   // [rows, vocab]

  int logit_rows() const { return logits_all ? B * T_in : B; }
  void resize(const ModelConfig& cfg, int B_, int T_in_, bool logits_all_);
};

// tokens: [B, T_in] row-major, T_in <= max_positions. When logits_all is
// false only the last position's logits are produced.
template <typename T>
void forward_batch(const ModelT<T>& m, const int* tokens, int B, int T_in, BatchCache<T>& cache,
                   bool logits_all, const Hooks<T>* hooks = nullptr);

// Mean cross-entropy over labeled positions; labels: [B, T_in], -1 = no loss.
template <typename T>
T batch_loss(const ModelT<T>& m, const BatchCache<T>& cache, const int* labels);

// Backward pass. dparams must be params-sized and pre-zeroed (gradients are
// accumulated). Returns the loss. When `hooks` carries ffn overrides,
// `override_grad` (if non-null, [d_model]) receives the summed gradient at
// the overridden site and the overridden branch is treated as constant.
template <typename T>
T backward_batch(const ModelT<T>& m, const int* tokens, int B, int T_in,
                 const BatchCache<T>& cache, const int* labels, std::vector<T>& dparams,
                 const Hooks<T>* hooks = nullptr, T* override_grad = nullptr,
                 int bwd_stop_layer = 0);

// Per-position next-token distributions for a single 2- or 3-token sequence;
// returns [T_in, vocab], each row summing to one.
template <typename T>
std::vector<T> forward_distributions(const ModelT<T>& m, std::span<const int> tokens);

// Argmax token at the last position for each row of a token batch.
std::vector<int> predict_last_argmax(const Model& m, const int* tokens, int B, int T_in,
                                     BatchCache<float>& cache);

}  // namespace ulab
