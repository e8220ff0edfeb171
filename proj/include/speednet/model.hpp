#pragma once

#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "speednet/ops.hpp"
#include "speednet/rng.hpp"
#include "speednet/tensor.hpp"

namespace speednet {

enum class ModelKind { ThreeDCMA, ThreeDCNNNoMask, ViViT };
enum class Preset { Faithful, Reduced };

inline std::string kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::ThreeDCMA: return "threedcma";
    case ModelKind::ThreeDCNNNoMask: return "threedcnn_nomask";
    case ModelKind::ViViT: return "vivit";
  }
  return "?";
}

inline std::optional<ModelKind> kind_from_name(const std::string& s) {
  if (s == "threedcma") return ModelKind::ThreeDCMA;
  if (s == "threedcnn_nomask") return ModelKind::ThreeDCNNNoMask;
  if (s == "vivit") return ModelKind::ViViT;
  return std::nullopt;
}

struct ModelSpec {
  ModelKind kind = ModelKind::ThreeDCMA;
  int64_t input_frames = 10;
  int64_t input_channels = 2;  // 2 with mask channel, 1 without
  Preset preset = Preset::Faithful;
  // ViViT settings
  int64_t tubelet_t = 6, tubelet_h = 8, tubelet_w = 8;
  int64_t layers = 16;
  int64_t heads = 16;
  int64_t dim = 128;

  void validate() const {
    if (kind == ModelKind::ThreeDCMA && input_channels != 2)
      throw std::invalid_argument("threedcma requires 2 input channels");
    if (kind == ModelKind::ThreeDCNNNoMask && input_channels != 1)
      throw std::invalid_argument("threedcnn_nomask requires 1 input channel");
    if (input_frames < 2) throw std::invalid_argument("input_frames must be >= 2");
    if (kind == ModelKind::ViViT) {
      if (layers < 1 || heads < 1 || dim < 1)
        throw std::invalid_argument("invalid vivit geometry");
      if (dim % heads) throw std::invalid_argument("vivit dim not divisible by heads");
    }
  }

  bool operator==(const ModelSpec&) const = default;
};

// Filter counts for the six conv layers and the fully connected head widths.
inline std::array<int64_t, 6> cnn_filters(Preset p) {
  return p == Preset::Faithful ? std::array<int64_t, 6>{32, 32, 64, 64, 128, 128}
                               : std::array<int64_t, 6>{4, 4, 8, 8, 16, 16};
}
inline std::array<int64_t, 4> cnn_fc_nodes(Preset p) {
  return p == Preset::Faithful ? std::array<int64_t, 4>{512, 256, 64, 1}
                               : std::array<int64_t, 4>{64, 32, 16, 1};
}

struct Model {
  ModelSpec spec;
  std::vector<std::pair<std::string, Tensor>> parameters;

  Tensor& param(const std::string& name) {
    for (auto& [n, t] : parameters)
      if (n == name) return t;
    throw std::runtime_error("unknown parameter: " + name);
  }
  const Tensor& param(const std::string& name) const {
    return const_cast<Model*>(this)->param(name);
  }
};

inline void zero_grads(Model& m) {
  for (auto& [name, p] : m.parameters) p.zero_grad();
}

inline int64_t param_count(const Model& m) {
  int64_t n = 0;
  for (const auto& [name, t] : m.parameters) n += t.numel();
  return n;
}

namespace detail {

inline Tensor init_weight(const Shape& shape, int64_t fan_in, Rng rng) {
  const real std = std::sqrt(real(2) / static_cast<real>(fan_in));
  std::vector<real> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<real>(rng.normal(0.0, std));
  return Tensor::create(shape, v, true);
}

inline Tensor init_normal(const Shape& shape, real std, Rng rng) {
  std::vector<real> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<real>(rng.normal(0.0, std));
  return Tensor::create(shape, v, true);
}

inline Tensor init_zeros(const Shape& shape) {
  return Tensor::create(shape, real(0), true);
}

inline Tensor init_ones(const Shape& shape) {
  return Tensor::create(shape, real(1), true);
}

}  // namespace detail

// Layer stack: conv,conv,pool(1,2,2),conv,conv,pool(2,2,2),conv,conv, then
// flatten and the fully connected head. The reduced preset shrinks filter
// counts and inserts two spatial-only (1,2,2) pools after conv4 and conv6 so
// desk-scale training fits in time budgets while keeping the topology.
inline Model build_3dcma(const ModelSpec& spec, uint64_t seed) {
  spec.validate();
  if (spec.kind == ModelKind::ViViT)
    throw std::invalid_argument("build_3dcma: spec kind is vivit");
  Model m;
  m.spec = spec;
  Rng root(seed);
  const auto filters = cnn_filters(spec.preset);
  int64_t in_ch = spec.input_channels;
  for (int i = 0; i < 6; ++i) {
    const int64_t oc = filters[static_cast<size_t>(i)];
    const std::string base = "conv" + std::to_string(i + 1);
    m.parameters.emplace_back(
        base + ".kernel",
        detail::init_weight({oc, in_ch, 3, 3, 3}, in_ch * 27,
                            root.split(static_cast<uint64_t>(i) * 2)));
    m.parameters.emplace_back(base + ".bias", detail::init_zeros({oc}));
    in_ch = oc;
  }
  // Head input size follows from the pooling walk; compute it symbolically.
  const int64_t T = spec.input_frames;
  if (T % 2)
    throw std::invalid_argument("build_3dcma: input_frames must be even, got " +
                                std::to_string(T));
  int64_t t = T, s = 64;
  s /= 2;           // pool1 (1,2,2)
  if (spec.preset == Preset::Reduced) s /= 2;  // extra pool after conv4
  t /= 2; s /= 2;   // pool2 (2,2,2)
  if (spec.preset == Preset::Reduced) s /= 2;  // extra pool after conv6
  int64_t width = filters[5] * t * s * s;
  const auto fc = cnn_fc_nodes(spec.preset);
  for (int i = 0; i < 4; ++i) {
    const std::string base = "fc" + std::to_string(i + 1);
    m.parameters.emplace_back(
        base + ".weight",
        detail::init_weight({width, fc[static_cast<size_t>(i)]}, width,
                            root.split(100 + static_cast<uint64_t>(i))));
    m.parameters.emplace_back(base + ".bias",
                              detail::init_zeros({fc[static_cast<size_t>(i)]}));
    width = fc[static_cast<size_t>(i)];
  }
  return m;
}

inline int64_t vivit_token_count(const ModelSpec& spec) {
  const int64_t Tp =
      ((spec.input_frames + spec.tubelet_t - 1) / spec.tubelet_t) * spec.tubelet_t;
  return (Tp / spec.tubelet_t) * (64 / spec.tubelet_h) * (64 / spec.tubelet_w);
}

inline Model build_vivit(const ModelSpec& spec, uint64_t seed) {
  spec.validate();
  if (spec.kind != ModelKind::ViViT)
    throw std::invalid_argument("build_vivit: spec kind is not vivit");
  if (64 % spec.tubelet_h || 64 % spec.tubelet_w)
    throw std::invalid_argument("build_vivit: tubelet does not divide 64x64");
  Model m;
  m.spec = spec;
  Rng root(seed);
  const int64_t flat =
      spec.input_channels * spec.tubelet_t * spec.tubelet_h * spec.tubelet_w;
  const int64_t n_tokens = vivit_token_count(spec);
  m.parameters.emplace_back(
      "tubelet.projection", detail::init_weight({flat, spec.dim}, flat, root.split(1)));
  m.parameters.emplace_back("tubelet.bias", detail::init_zeros({spec.dim}));
  m.parameters.emplace_back(
      "pos_embed", detail::init_normal({n_tokens, spec.dim}, real(0.02), root.split(2)));
  for (int64_t l = 0; l < spec.layers; ++l) {
    const std::string base = "block" + std::to_string(l) + ".";
    Rng lr = root.split(10 + static_cast<uint64_t>(l));
    m.parameters.emplace_back(base + "ln1.gain", detail::init_ones({spec.dim}));
    m.parameters.emplace_back(base + "ln1.shift", detail::init_zeros({spec.dim}));
    const char* names[] = {"wq", "wk", "wv", "wo"};
    for (int i = 0; i < 4; ++i) {
      m.parameters.emplace_back(
          base + "attn." + names[i],
          detail::init_weight({spec.dim, spec.dim}, spec.dim,
                              lr.split(static_cast<uint64_t>(i))));
      m.parameters.emplace_back(base + "attn.b" + std::string(names[i]).substr(1),
                                detail::init_zeros({spec.dim}));
    }
    m.parameters.emplace_back(base + "ln2.gain", detail::init_ones({spec.dim}));
    m.parameters.emplace_back(base + "ln2.shift", detail::init_zeros({spec.dim}));
    m.parameters.emplace_back(
        base + "mlp.w1",
        detail::init_weight({spec.dim, 4 * spec.dim}, spec.dim, lr.split(10)));
    m.parameters.emplace_back(base + "mlp.b1", detail::init_zeros({4 * spec.dim}));
    m.parameters.emplace_back(
        base + "mlp.w2",
        detail::init_weight({4 * spec.dim, spec.dim}, 4 * spec.dim, lr.split(11)));
    m.parameters.emplace_back(base + "mlp.b2", detail::init_zeros({spec.dim}));
  }
  m.parameters.emplace_back(
      "head.weight", detail::init_weight({spec.dim, 1}, spec.dim, root.split(99)));
  m.parameters.emplace_back("head.bias", detail::init_zeros({1}));
  return m;
}

inline Model build_model(const ModelSpec& spec, uint64_t seed) {
  return spec.kind == ModelKind::ViViT ? build_vivit(spec, seed)
                                       : build_3dcma(spec, seed);
}

namespace detail {

inline Tensor forward_3dcma(const Model& m, const Tensor& clip,
                            std::vector<Shape>* trace) {
  auto note = [&](const Tensor& t) {
    if (trace) trace->push_back(t.shape());
    return t;
  };
  const bool reduced = m.spec.preset == Preset::Reduced;
  Tensor x = note(clip);
  auto conv = [&](int i) {
    Conv3dParams p{m.param("conv" + std::to_string(i) + ".kernel"),
                   m.param("conv" + std::to_string(i) + ".bias"),
                   {1, 1, 1},
                   {1, 1, 1}};
    x = note(relu(conv3d(x, p)));
  };
  conv(1);
  conv(2);
  x = note(maxpool3d(x, Pool3dSpec{{1, 2, 2}}));
  conv(3);
  conv(4);
  if (reduced) x = note(maxpool3d(x, Pool3dSpec{{1, 2, 2}}));
  x = note(maxpool3d(x, Pool3dSpec{{2, 2, 2}}));
  conv(5);
  conv(6);
  if (reduced) x = note(maxpool3d(x, Pool3dSpec{{1, 2, 2}}));
  x = note(reshape(x, {x.numel()}));
  for (int i = 1; i <= 4; ++i) {
    x = linear(x, m.param("fc" + std::to_string(i) + ".weight"),
               m.param("fc" + std::to_string(i) + ".bias"));
    if (i < 4) x = relu(x);
    note(x);
  }
  return x;
}

inline Tensor forward_vivit(const Model& m, const Tensor& clip,
                            std::vector<Shape>* trace) {
  const ModelSpec& s = m.spec;
  Tensor tokens =
      tubelet_embed(clip, s.tubelet_t, s.tubelet_h, s.tubelet_w, s.dim,
                    m.param("tubelet.projection"), m.param("tubelet.bias"));
  if (trace) trace->push_back(tokens.shape());
  tokens = add(tokens, m.param("pos_embed"));
  for (int64_t l = 0; l < s.layers; ++l) {
    const std::string base = "block" + std::to_string(l) + ".";
    Tensor h = layer_norm(tokens, m.param(base + "ln1.gain"),
                          m.param(base + "ln1.shift"));
    AttentionParams ap;
    ap.num_heads = s.heads;
    ap.model_dim = s.dim;
    ap.wq = m.param(base + "attn.wq");
    ap.wk = m.param(base + "attn.wk");
    ap.wv = m.param(base + "attn.wv");
    ap.wo = m.param(base + "attn.wo");
    ap.bq = m.param(base + "attn.bq");
    ap.bk = m.param(base + "attn.bk");
    ap.bv = m.param(base + "attn.bv");
    ap.bo = m.param(base + "attn.bo");
    tokens = add(tokens, multi_head_self_attention(h, ap));
    Tensor h2 = layer_norm(tokens, m.param(base + "ln2.gain"),
                           m.param(base + "ln2.shift"));
    h2 = linear(relu(linear(h2, m.param(base + "mlp.w1"), m.param(base + "mlp.b1"))),
                m.param(base + "mlp.w2"), m.param(base + "mlp.b2"));
    tokens = add(tokens, h2);
    if (trace) trace->push_back(tokens.shape());
  }
  // mean-pool tokens, then the scalar regression head
  Tensor pooled = scale(sum_rows(tokens), real(1) / static_cast<real>(tokens.shape()[0]));
  Tensor out = linear(pooled, m.param("head.weight"), m.param("head.bias"));
  if (trace) trace->push_back(out.shape());
  return out;
}

}  // namespace detail

inline Tensor forward(const Model& m, const Tensor& clip,
                      std::vector<Shape>* trace = nullptr) {
  if (clip.shape().size() != 4 || clip.shape()[0] != m.spec.input_channels ||
      clip.shape()[1] != m.spec.input_frames || clip.shape()[2] != 64 ||
      clip.shape()[3] != 64)
    throw std::invalid_argument(
        "forward: clip shape " + shape_str(clip.shape()) + " does not match spec [" +
        std::to_string(m.spec.input_channels) + "x" +
        std::to_string(m.spec.input_frames) + "x64x64]");
  return m.spec.kind == ModelKind::ViViT ? detail::forward_vivit(m, clip, trace)
                                         : detail::forward_3dcma(m, clip, trace);
}

// -------- checkpoint format --------
// Line 1:  SPDCKPT1
// Line 2:  kind preset input_frames input_channels tubelet_t tubelet_h
//          tubelet_w layers heads dim
// Then per parameter: a text line "name ndim e0 e1 ..." followed by
// numel little-endian 64-bit floats. Round-trips bit-exactly.

inline void save_checkpoint(const Model& m, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  const ModelSpec& s = m.spec;
  f << "SPDCKPT1\n";
  f << kind_name(s.kind) << ' ' << (s.preset == Preset::Faithful ? "faithful" : "reduced")
    << ' ' << s.input_frames << ' ' << s.input_channels << ' ' << s.tubelet_t << ' '
    << s.tubelet_h << ' ' << s.tubelet_w << ' ' << s.layers << ' ' << s.heads << ' '
    << s.dim << '\n';
  for (const auto& [name, t] : m.parameters) {
    f << name << ' ' << t.shape().size();
    for (int64_t e : t.shape()) f << ' ' << e;
    f << '\n';
    for (real v : t.values()) {
      const double d = static_cast<double>(v);
      uint64_t bits;
      std::memcpy(&bits, &d, 8);
      char buf[8];
      for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
      f.write(buf, 8);
    }
  }
  if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

inline Model load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read checkpoint: " + path);
  std::string magic;
  std::getline(f, magic);
  if (magic != "SPDCKPT1")
    throw std::runtime_error("bad checkpoint header in " + path);
  std::string specline;
  std::getline(f, specline);
  std::istringstream ss(specline);
  std::string kind, preset;
  ModelSpec s;
  ss >> kind >> preset >> s.input_frames >> s.input_channels >> s.tubelet_t >>
      s.tubelet_h >> s.tubelet_w >> s.layers >> s.heads >> s.dim;
  if (!ss) throw std::runtime_error("bad checkpoint spec line in " + path);
  auto k = kind_from_name(kind);
  if (!k) throw std::runtime_error("unknown model kind in checkpoint: " + kind);
  s.kind = *k;
  s.preset = preset == "faithful" ? Preset::Faithful : Preset::Reduced;
  Model m;
  m.spec = s;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name;
    size_t ndim = 0;
    ls >> name >> ndim;
    Shape shape(ndim);
    for (auto& e : shape) ls >> e;
    if (!ls) throw std::runtime_error("bad parameter record in " + path);
    const int64_t n = shape_numel(shape);
    std::vector<real> vals(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
      char buf[8];
      f.read(buf, 8);
      if (!f) throw std::runtime_error("truncated checkpoint: " + path);
      uint64_t bits = 0;
      for (int b = 0; b < 8; ++b)
        bits |= static_cast<uint64_t>(static_cast<unsigned char>(buf[b])) << (8 * b);
      double d;
      std::memcpy(&d, &bits, 8);
      vals[static_cast<size_t>(i)] = static_cast<real>(d);
    }
    m.parameters.emplace_back(name, Tensor::create(shape, vals, true));
  }
  return m;
}

}  // namespace speednet
