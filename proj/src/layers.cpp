#include "apseg/layers.hpp"

#include <cmath>

namespace apseg {

template <typename T>
std::vector<T> xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::size_t count, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<T> w(count);
  for (auto& x : w) x = static_cast<T>(rng.uniform(-a, a));
  return w;
}

template <typename T>
Linear<T>::Linear(ParameterSet<T>& ps, const std::string& name, std::size_t in, std::size_t out,
                  Rng& rng)
    : in_(in), out_(out) {
  w_ = &ps.add(name + ".weight", {in, out}, xavier_uniform<T>(in, out, in * out, rng));
  b_ = &ps.add(name + ".bias", {out}, std::vector<T>(out, T(0)));
}

template <typename T>
Tensor<T> Linear<T>::operator()(Bindings<T>& b, const Tensor<T>& x) const {
  return linear(x, b(*w_), b(*b_));
}

template <typename T>
Conv1x1<T>::Conv1x1(ParameterSet<T>& ps, const std::string& name, std::size_t in, std::size_t out,
                    Rng& rng)
    : in_(in), out_(out) {
  w_ = &ps.add(name + ".weight", {out, in}, xavier_uniform<T>(in, out, in * out, rng));
  b_ = &ps.add(name + ".bias", {out}, std::vector<T>(out, T(0)));
}

template <typename T>
Tensor<T> Conv1x1<T>::operator()(Bindings<T>& b, const Tensor<T>& x) const {
  return conv1x1(x, b(*w_), b(*b_));
}

template <typename T>
LayerNorm<T>::LayerNorm(ParameterSet<T>& ps, const std::string& name, std::size_t dim) {
  gamma_ = &ps.add(name + ".gamma", {dim}, std::vector<T>(dim, T(1)));
  beta_ = &ps.add(name + ".beta", {dim}, std::vector<T>(dim, T(0)));
}

template <typename T>
Tensor<T> LayerNorm<T>::operator()(Bindings<T>& b, const Tensor<T>& x) const {
  return layer_norm_rows(x, b(*gamma_), b(*beta_));
}

template <typename T>
Mlp<T>::Mlp(ParameterSet<T>& ps, const std::string& name, std::size_t in, std::size_t hidden,
            std::size_t out, Rng& rng)
    : fc1_(ps, name + ".fc1", in, hidden, rng), fc2_(ps, name + ".fc2", hidden, out, rng) {}

template <typename T>
Tensor<T> Mlp<T>::operator()(Bindings<T>& b, const Tensor<T>& x) const {
  return fc2_(b, relu(fc1_(b, x)));
}

template <typename T>
Attention<T>::Attention(ParameterSet<T>& ps, const std::string& name, std::size_t model_dim,
                        std::size_t internal_dim, Rng& rng)
    : q_(ps, name + ".q", model_dim, internal_dim, rng),
      k_(ps, name + ".k", model_dim, internal_dim, rng),
      v_(ps, name + ".v", model_dim, internal_dim, rng),
      o_(ps, name + ".out", internal_dim, model_dim, rng),
      internal_(internal_dim) {}

template <typename T>
Tensor<T> Attention<T>::operator()(Bindings<T>& b, const Tensor<T>& queries, const Tensor<T>& keys,
                                   const Tensor<T>& values) const {
  auto q = q_(b, queries);
  auto k = k_(b, keys);
  auto v = v_(b, values);
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(internal_));
  auto weights = softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt));
  return o_(b, matmul(weights, v));
}

template <typename T>
DecoderBlock<T>::DecoderBlock(ParameterSet<T>& ps, const std::string& name, std::size_t dim,
                              std::size_t ffn_dim, Rng& rng)
    : self_(ps, name + ".self_attn", dim, dim, rng),
      cross_(ps, name + ".cross_attn", dim, dim, rng),
      ffn_(ps, name + ".ffn", dim, ffn_dim, dim, rng),
      ln1_(ps, name + ".norm1", dim),
      ln2_(ps, name + ".norm2", dim),
      ln3_(ps, name + ".norm3", dim) {}

template <typename T>
Tensor<T> DecoderBlock<T>::operator()(Bindings<T>& b, const Tensor<T>& tokens,
                                      const Tensor<T>& memory_keys,
                                      const Tensor<T>& memory_values) const {
  auto t = ln1_(b, add(tokens, self_(b, tokens, tokens, tokens)));
  t = ln2_(b, add(t, cross_(b, t, memory_keys, memory_values)));
  return ln3_(b, add(t, ffn_(b, t)));
}

template <typename T>
TwoWayBlock<T>::TwoWayBlock(ParameterSet<T>& ps, const std::string& name, std::size_t dim,
                            std::size_t attn_dim, std::size_t ffn_dim, Rng& rng)
    : self_(ps, name + ".self_attn", dim, attn_dim, rng),
      token_to_image_(ps, name + ".token_to_image", dim, attn_dim, rng),
      image_to_token_(ps, name + ".image_to_token", dim, attn_dim, rng),
      mlp_(ps, name + ".mlp", dim, ffn_dim, dim, rng),
      ln1_(ps, name + ".norm1", dim),
      ln2_(ps, name + ".norm2", dim),
      ln3_(ps, name + ".norm3", dim),
      ln4_(ps, name + ".norm4", dim) {}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> TwoWayBlock<T>::operator()(Bindings<T>& b, const Tensor<T>& tokens,
                                                           const Tensor<T>& image) const {
  auto t = ln1_(b, add(tokens, self_(b, tokens, tokens, tokens)));
  t = ln2_(b, add(t, token_to_image_(b, t, image, image)));
  t = ln3_(b, add(t, mlp_(b, t)));
  auto img = ln4_(b, add(image, image_to_token_(b, image, t, t)));
  return {t, img};
}

#define APSEG_INSTANTIATE_LAYERS(T)                                                            \
  template std::vector<T> xavier_uniform<T>(std::size_t, std::size_t, std::size_t, Rng&);    \
  template class Linear<T>;                                                                    \
  template class Conv1x1<T>;                                                                   \
  template class LayerNorm<T>;                                                                 \
  template class Mlp<T>;                                                                       \
  template class Attention<T>;                                                                 \
  template class DecoderBlock<T>;                                                              \
  template class TwoWayBlock<T>;

APSEG_INSTANTIATE_LAYERS(float)
APSEG_INSTANTIATE_LAYERS(double)

}  // namespace apseg
