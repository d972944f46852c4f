#pragma once

// Small trainable building blocks. Layers hold non-owning pointers into a
// ParameterSet and are cheap to copy.

#include <string>
#include <utility>

#include "apseg/ops.hpp"
#include "apseg/optim.hpp"
#include "apseg/random.hpp"

namespace apseg {

/// Xavier-uniform values for a fan_in×fan_out weight.
template <typename T>
std::vector<T> xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::size_t count, Rng& rng);

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(ParameterSet<T>& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng);
  /// x[n×in] → n×out.
  Tensor<T> operator()(Bindings<T>& b, const Tensor<T>& x) const;
  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }
  Parameter<T>& weight() const { return *w_; }
  Parameter<T>& bias() const { return *b_; }

 private:
  Parameter<T>* w_ = nullptr;
  Parameter<T>* b_ = nullptr;
  std::size_t in_ = 0, out_ = 0;
};

template <typename T>
class Conv1x1 {
 public:
  Conv1x1() = default;
  Conv1x1(ParameterSet<T>& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng);
  /// x[in×h×w] → out×h×w.
  Tensor<T> operator()(Bindings<T>& b, const Tensor<T>& x) const;
  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }
  Parameter<T>& weight() const { return *w_; }
  Parameter<T>& bias() const { return *b_; }

 private:
  Parameter<T>* w_ = nullptr;
  Parameter<T>* b_ = nullptr;
  std::size_t in_ = 0, out_ = 0;
};

template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterSet<T>& ps, const std::string& name, std::size_t dim);
  Tensor<T> operator()(Bindings<T>& b, const Tensor<T>& x) const;

 private:
  Parameter<T>* gamma_ = nullptr;
  Parameter<T>* beta_ = nullptr;
};

/// Two linear layers with a ReLU between them.
template <typename T>
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParameterSet<T>& ps, const std::string& name, std::size_t in, std::size_t hidden,
      std::size_t out, Rng& rng);
  Tensor<T> operator()(Bindings<T>& b, const Tensor<T>& x) const;

 private:
  Linear<T> fc1_, fc2_;
};

/// Single-head scaled dot-product attention with an internal width that may
/// differ from the model width.
template <typename T>
class Attention {
 public:
  Attention() = default;
  Attention(ParameterSet<T>& ps, const std::string& name, std::size_t model_dim,
            std::size_t internal_dim, Rng& rng);
  /// queries[nq×d], keys[nk×d], values[nk×d] → nq×d.
  Tensor<T> operator()(Bindings<T>& b, const Tensor<T>& queries, const Tensor<T>& keys,
                       const Tensor<T>& values) const;
  Linear<T>& q_proj() { return q_; }
  Linear<T>& k_proj() { return k_; }
  Linear<T>& v_proj() { return v_; }
  Linear<T>& out_proj() { return o_; }

 private:
  Linear<T> q_, k_, v_, o_;
  std::size_t internal_ = 0;
};

/// Post-norm transformer decoder block: self-attention over the query
/// tokens, cross-attention into a memory, feed-forward.
template <typename T>
class DecoderBlock {
 public:
  DecoderBlock() = default;
  DecoderBlock(ParameterSet<T>& ps, const std::string& name, std::size_t dim,
               std::size_t ffn_dim, Rng& rng);
  /// memory_keys carry positional encoding; memory_values do not.
  Tensor<T> operator()(Bindings<T>& b, const Tensor<T>& tokens, const Tensor<T>& memory_keys,
                       const Tensor<T>& memory_values) const;
  Attention<T>& self_attention() { return self_; }
  Attention<T>& cross_attention() { return cross_; }

 private:
  Attention<T> self_, cross_;
  Mlp<T> ffn_;
  LayerNorm<T> ln1_, ln2_, ln3_;
};

/// Two-way attention block: tokens attend to themselves and to the image,
/// then the image attends back to the tokens.
template <typename T>
class TwoWayBlock {
 public:
  TwoWayBlock() = default;
  TwoWayBlock(ParameterSet<T>& ps, const std::string& name, std::size_t dim,
              std::size_t attn_dim, std::size_t ffn_dim, Rng& rng);
  /// tokens[n×d], image[hw×d] → updated (tokens, image).
  std::pair<Tensor<T>, Tensor<T>> operator()(Bindings<T>& b, const Tensor<T>& tokens,
                                             const Tensor<T>& image) const;

 private:
  Attention<T> self_, token_to_image_, image_to_token_;
  Mlp<T> mlp_;
  LayerNorm<T> ln1_, ln2_, ln3_, ln4_;
};

}  // namespace apseg
