#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "circa/errors.hpp"
#include "circa/faultmodel.hpp"
#include "circa/field.hpp"
#include "circa/rng.hpp"
#include "circa/stochastic.hpp"

namespace circa {

/// Flat field-element array with an explicit shape: {c, h, w} for image maps,
/// {n} for feature vectors, {out, in} and {oc, ic, kh, kw} for weights.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<FieldElement> data;

  std::size_t numel() const {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }

  static Tensor zeros(std::vector<std::size_t> shape) {
    Tensor t;
    t.shape = std::move(shape);
    t.data.assign(t.numel(), FieldElement{0});
    return t;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

struct Conv2D {
  Tensor w;  // {oc, ic, kh, kw}
  std::size_t stride = 1;
  std::size_t pad = 0;
  FixedPointScale scale;
};

struct FullyConnected {
  Tensor w;     // {out, in}
  Tensor bias;  // {out}, or empty for none
  FixedPointScale scale;
};

struct Relu {
  friend bool operator==(const Relu&, const Relu&) = default;
};

struct AvgPool {
  std::size_t window = 2;
  std::size_t stride = 2;
};

struct Flatten {
  friend bool operator==(const Flatten&, const Flatten&) = default;
};

using Layer = std::variant<Conv2D, FullyConnected, Relu, AvgPool, Flatten>;

struct Model {
  FieldParams fp;
  FixedPointScale input_scale;
  std::vector<std::size_t> input_shape;
  std::vector<Layer> layers;
};

namespace detail {

/// round(v / 2^f), half away from zero.
inline std::int64_t rounded_shift(std::int64_t v, int f) {
  if (f <= 0) return v;
  const std::int64_t b = std::int64_t{1} << (f - 1);
  return v >= 0 ? (v + b) >> f : -((-v + b) >> f);
}

/// round(v / n), half away from zero. n > 0.
inline std::int64_t rounded_div(std::int64_t v, std::int64_t n) {
  return v >= 0 ? (v + n / 2) / n : -((-v + n / 2) / n);
}

inline std::string shape_str(const std::vector<std::size_t>& s) {
  std::string out = "{";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "}";
}

constexpr std::size_t kMaxTensorElems = std::size_t{1} << 24;

}  // namespace detail

/// Shape the layer produces from `in`, or ModelError naming the layer.
inline std::vector<std::size_t> layer_output_shape(const Layer& layer,
                                                   const std::vector<std::size_t>& in,
                                                   std::size_t layer_idx) {
  auto fail = [&](const std::string& what) -> std::vector<std::size_t> {
    throw ModelError("layer " + std::to_string(layer_idx) + ": " + what + " (input shape " +
                     detail::shape_str(in) + ")");
  };
  if (const auto* l = std::get_if<Conv2D>(&layer)) {
    if (l->w.shape.size() != 4) return fail("conv weights must be rank 4");
    if (l->stride == 0) return fail("conv stride must be positive");
    if (in.size() != 3) return fail("conv expects a {c,h,w} input");
    const std::size_t oc = l->w.shape[0], ic = l->w.shape[1];
    const std::size_t kh = l->w.shape[2], kw = l->w.shape[3];
    if (in[0] != ic) return fail("conv channel mismatch");
    const std::size_t h = in[1] + 2 * l->pad, w = in[2] + 2 * l->pad;
    if (h < kh || w < kw) return fail("conv kernel larger than padded input");
    return {oc, (h - kh) / l->stride + 1, (w - kw) / l->stride + 1};
  }
  if (const auto* l = std::get_if<FullyConnected>(&layer)) {
    if (l->w.shape.size() != 2) return fail("fc weights must be rank 2");
    if (in.size() != 1 || in[0] != l->w.shape[1]) return fail("fc input width mismatch");
    if (!l->bias.data.empty() && l->bias.shape != std::vector<std::size_t>{l->w.shape[0]})
      return fail("fc bias shape mismatch");
    return {l->w.shape[0]};
  }
  if (const auto* l = std::get_if<AvgPool>(&layer)) {
    if (l->window == 0 || l->stride == 0) return fail("pool window and stride must be positive");
    if (in.size() != 3) return fail("pool expects a {c,h,w} input");
    if (in[1] < l->window || in[2] < l->window) return fail("pool window larger than input");
    return {in[0], (in[1] - l->window) / l->stride + 1, (in[2] - l->window) / l->stride + 1};
  }
  if (std::holds_alternative<Flatten>(layer)) {
    std::size_t n = 1;
    for (std::size_t d : in) n *= d;
    if (in.empty() || n == 0) return fail("flatten on empty shape");
    return {n};
  }
  return in;  // Relu
}

/// Full static check: shapes chain, weights are field members under the 15-bit
/// quantization cap, scales are sane. Throws ModelError.
inline void validate_model(const Model& model) {
  if (model.fp.p == 0) throw ModelError("model has no field parameters");
  if (model.input_shape.empty()) throw ModelError("model has no input shape");
  for (std::size_t d : model.input_shape)
    if (d == 0 || d > detail::kMaxTensorElems) throw ModelError("model input shape out of range");

  auto check_weights = [&](const Tensor& t, std::size_t idx, const char* what) {
    if (t.data.size() != t.numel())
      throw ModelError("layer " + std::to_string(idx) + ": " + what + " data/shape mismatch");
    for (const FieldElement& e : t.data) {
      if (e.v >= model.fp.p)
        throw ModelError("layer " + std::to_string(idx) + ": " + what + " not a field member");
      std::int64_t d = model.fp.decode(e);
      if (d <= -FixedPointScale::kMagnitudeCap || d >= FixedPointScale::kMagnitudeCap)
        throw ModelError("layer " + std::to_string(idx) + ": " + what + " magnitude " +
                         std::to_string(d) + " breaks the 15-bit quantization cap");
    }
  };
  auto check_scale = [&](FixedPointScale s, std::size_t idx) {
    if (s.f < 0 || s.f >= 32)
      throw ModelError("layer " + std::to_string(idx) + ": scale f out of range");
  };
  if (model.input_scale.f < 0 || model.input_scale.f >= 32)
    throw ModelError("model input scale f out of range");

  std::vector<std::size_t> shape = model.input_shape;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const Layer& layer = model.layers[i];
    if (const auto* l = std::get_if<Conv2D>(&layer)) {
      check_weights(l->w, i, "conv weight");
      check_scale(l->scale, i);
    } else if (const auto* l = std::get_if<FullyConnected>(&layer)) {
      check_weights(l->w, i, "fc weight");
      if (!l->bias.data.empty()) check_weights(l->bias, i, "fc bias");
      check_scale(l->scale, i);
    }
    shape = layer_output_shape(layer, shape, i);
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    if (n > detail::kMaxTensorElems)
      throw ModelError("layer " + std::to_string(i) + ": activation tensor too large");
  }
}

inline std::vector<std::size_t> output_shape(const Model& model) {
  std::vector<std::size_t> shape = model.input_shape;
  for (std::size_t i = 0; i < model.layers.size(); ++i)
    shape = layer_output_shape(model.layers[i], shape, i);
  return shape;
}

/// x -> W*x, all arithmetic in the field, no bias and no rescale. The linear
/// core both cleartext inference and the share-wise protocol evaluate.
inline Tensor conv2d_forward(const Conv2D& l, const Tensor& x, const FieldParams& fp) {
  const std::size_t ic = l.w.shape[1], kh = l.w.shape[2], kw = l.w.shape[3];
  const std::size_t h = x.shape[1], w = x.shape[2];
  Tensor out = Tensor::zeros(layer_output_shape(Layer{l}, x.shape, 0));
  const std::size_t oh = out.shape[1], ow = out.shape[2];
  for (std::size_t o = 0; o < out.shape[0]; ++o)
    for (std::size_t r = 0; r < oh; ++r)
      for (std::size_t c = 0; c < ow; ++c) {
        FieldElement acc{0};
        for (std::size_t i = 0; i < ic; ++i)
          for (std::size_t a = 0; a < kh; ++a)
            for (std::size_t b = 0; b < kw; ++b) {
              // top-left of the window in padded coordinates, then unpad
              std::size_t pr = r * l.stride + a, pc = c * l.stride + b;
              if (pr < l.pad || pc < l.pad) continue;
              std::size_t xr = pr - l.pad, xc = pc - l.pad;
              if (xr >= h || xc >= w) continue;
              FieldElement wv = l.w.data[((o * ic + i) * kh + a) * kw + b];
              FieldElement xv = x.data[(i * h + xr) * w + xc];
              acc = fp.add(acc, fp.mul(wv, xv));
            }
        out.data[(o * oh + r) * ow + c] = acc;
      }
  return out;
}

inline Tensor fc_forward(const FullyConnected& l, const Tensor& x, const FieldParams& fp,
                         bool include_bias = true) {
  const std::size_t out_dim = l.w.shape[0], in_dim = l.w.shape[1];
  Tensor out = Tensor::zeros({out_dim});
  for (std::size_t o = 0; o < out_dim; ++o) {
    FieldElement acc{0};
    for (std::size_t i = 0; i < in_dim; ++i)
      acc = fp.add(acc, fp.mul(l.w.data[o * in_dim + i], x.data[i]));
    if (include_bias && !l.bias.data.empty()) acc = fp.add(acc, l.bias.data[o]);
    out.data[o] = acc;
  }
  return out;
}

/// Window sums only; the mean's divisor is applied separately so the linear
/// part can run on secret shares.
inline Tensor sum_pool_forward(const AvgPool& l, const Tensor& x, const FieldParams& fp) {
  const std::size_t h = x.shape[1], w = x.shape[2];
  Tensor out = Tensor::zeros(layer_output_shape(Layer{l}, x.shape, 0));
  const std::size_t oh = out.shape[1], ow = out.shape[2];
  for (std::size_t ch = 0; ch < out.shape[0]; ++ch)
    for (std::size_t r = 0; r < oh; ++r)
      for (std::size_t c = 0; c < ow; ++c) {
        FieldElement acc{0};
        for (std::size_t a = 0; a < l.window; ++a)
          for (std::size_t b = 0; b < l.window; ++b)
            acc = fp.add(acc, x.data[(ch * h + r * l.stride + a) * w + c * l.stride + b]);
        out.data[(ch * oh + r) * ow + c] = acc;
      }
  return out;
}

/// Decode, divide by n rounding half away from zero, re-encode.
inline Tensor divide_rounded(const Tensor& t, std::int64_t n, const FieldParams& fp) {
  Tensor out = t;
  for (FieldElement& e : out.data) e = fp.encode(detail::rounded_div(fp.decode(e), n));
  return out;
}

/// Decode, drop f fractional bits rounding half away from zero, re-encode.
inline Tensor rescale_tensor(const Tensor& t, int f, const FieldParams& fp) {
  if (f == 0) return t;
  Tensor out = t;
  for (FieldElement& e : out.data) e = fp.encode(detail::rounded_shift(fp.decode(e), f));
  return out;
}

inline void check_input(const Model& model, const Tensor& input) {
  if (input.shape != model.input_shape || input.data.size() != input.numel())
    throw ModelError("input shape " + detail::shape_str(input.shape) + " does not match model " +
                     detail::shape_str(model.input_shape));
  for (const FieldElement& e : input.data)
    if (e.v >= model.fp.p) throw ModelError("input element not a field member");
}

/// Shared inference walk. relu_fn(relu_ordinal, flat_index, x) supplies the
/// activation function; everything else is fixed by the model.
template <class ReluFn>
Tensor infer_with_relu(const Model& model, const Tensor& input, bool rescale_enabled,
                       ReluFn&& relu_fn) {
  check_input(model, input);
  Tensor x = input;
  std::size_t relu_ordinal = 0;
  for (const Layer& layer : model.layers) {
    if (const auto* l = std::get_if<Conv2D>(&layer)) {
      x = conv2d_forward(*l, x, model.fp);
      if (rescale_enabled) x = rescale_tensor(x, l->scale.f, model.fp);
    } else if (const auto* l = std::get_if<FullyConnected>(&layer)) {
      x = fc_forward(*l, x, model.fp);
      if (rescale_enabled) x = rescale_tensor(x, l->scale.f, model.fp);
    } else if (const auto* l = std::get_if<AvgPool>(&layer)) {
      x = divide_rounded(sum_pool_forward(*l, x, model.fp),
                         static_cast<std::int64_t>(l->window * l->window), model.fp);
    } else if (std::holds_alternative<Flatten>(layer)) {
      x.shape = {x.data.size()};
    } else {
      for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] = relu_fn(relu_ordinal, i, x.data[i]);
      ++relu_ordinal;
    }
  }
  return x;
}

/// Exact integer inference: ReLU keeps non-negative decodes, multiplying
/// layers rescale by their own f (round to nearest) when enabled.
inline Tensor infer_plain(const Model& model, const Tensor& input, bool rescale_enabled = true) {
  return infer_with_relu(model, input, rescale_enabled,
                         [&](std::size_t, std::size_t, FieldElement v) {
                           return model.fp.is_negative(v) ? FieldElement{0} : v;
                         });
}

/// infer_plain with every ReLU replaced by the stochastic simulator; the mask
/// for activation j of the n-th ReLU layer comes from mask_stream(seed, n, j),
/// so results do not depend on evaluation order.
inline Tensor infer_stochastic(const Model& model, const Tensor& input,
                               const StochasticReluConfig& cfg, bool rescale_enabled = true) {
  if (cfg.k < 0 || cfg.k >= model.fp.m)
    throw std::invalid_argument("infer_stochastic: k outside [0, m)");
  return infer_with_relu(model, input, rescale_enabled,
                         [&](std::size_t ordinal, std::size_t idx, FieldElement v) {
                           SplitMix64 rng = mask_stream(cfg.seed, ordinal, idx);
                           return stochastic_relu_sim(v, cfg, rng, model.fp);
                         });
}

struct FaultStats {
  std::size_t activations = 0;
  std::size_t faults = 0;

  double rate() const {
    return activations == 0 ? 0.0 : static_cast<double>(faults) / static_cast<double>(activations);
  }
};

/// Counts sign faults against the plaintext activation trace: every ReLU input
/// is taken from exact inference, so the counted events match the analytic
/// per-activation fault model and are non-decreasing in k for fixed seed.
inline FaultStats teacher_forced_faults(const Model& model, const Tensor& input,
                                        const StochasticReluConfig& cfg,
                                        bool rescale_enabled = true) {
  if (cfg.k < 0 || cfg.k >= model.fp.m)
    throw std::invalid_argument("teacher_forced_faults: k outside [0, m)");
  FaultStats st;
  infer_with_relu(model, input, rescale_enabled,
                  [&](std::size_t ordinal, std::size_t idx, FieldElement v) {
                    FieldElement t = derive_mask(cfg.seed, ordinal, idx, model.fp);
                    ++st.activations;
                    if (stochastic_fault(v, t.v, cfg.k, cfg.mode, model.fp)) ++st.faults;
                    return model.fp.is_negative(v) ? FieldElement{0} : v;
                  });
  return st;
}

inline std::size_t argmax_logits(const Tensor& logits, const FieldParams& fp) {
  if (logits.data.empty()) throw ModelError("argmax on empty logits");
  std::size_t best = 0;
  std::int64_t best_v = fp.decode(logits.data[0]);
  for (std::size_t i = 1; i < logits.data.size(); ++i) {
    std::int64_t v = fp.decode(logits.data[i]);
    if (v > best_v) {
      best = i;
      best_v = v;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Model and dataset files.
//
// Manifest: JSON, format tag "circa-model-v1", keys p / input_scale_f /
// input_shape / layers. Tensors live in sibling files of raw 8-byte
// little-endian canonical residues, referenced by relative name.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_u64_le(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

inline std::uint64_t read_u64_le(const unsigned char* b) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline void save_tensor_raw(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ModelError("cannot write tensor file: " + path.string());
  for (const FieldElement& e : t.data) detail::write_u64_le(os, e.v);
  if (!os) throw ModelError("short write on tensor file: " + path.string());
}

inline Tensor load_tensor_raw(const std::filesystem::path& path, std::vector<std::size_t> shape,
                              const FieldParams& fp) {
  Tensor t;
  t.shape = std::move(shape);
  std::size_t n = t.numel();
  if (n == 0 || n > detail::kMaxTensorElems)
    throw ModelError("tensor shape out of range: " + path.string());
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ModelError("missing tensor file: " + path.string());
  std::vector<unsigned char> raw(n * 8 + 1);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(is.gcount()) != n * 8)
    throw ModelError("tensor file size mismatch: " + path.string());
  t.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t v = detail::read_u64_le(raw.data() + 8 * i);
    if (v >= fp.p) throw ModelError("tensor element not a field member: " + path.string());
    t.data[i] = {v};
  }
  return t;
}

inline void save_model(const Model& model, const std::filesystem::path& manifest_path) {
  validate_model(model);
  std::filesystem::path dir = manifest_path.parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  const std::string stem = manifest_path.stem().string();

  nlohmann::json j;
  j["format"] = "circa-model-v1";
  j["p"] = model.fp.p;
  j["input_scale_f"] = model.input_scale.f;
  j["input_shape"] = model.input_shape;
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    nlohmann::json e;
    const Layer& layer = model.layers[i];
    if (const auto* l = std::get_if<Conv2D>(&layer)) {
      e["type"] = "conv2d";
      e["w"] = stem + "_l" + std::to_string(i) + "_w.bin";
      e["w_shape"] = l->w.shape;
      e["stride"] = l->stride;
      e["pad"] = l->pad;
      e["f"] = l->scale.f;
      save_tensor_raw(dir / e["w"].get<std::string>(), l->w);
    } else if (const auto* l = std::get_if<FullyConnected>(&layer)) {
      e["type"] = "fc";
      e["w"] = stem + "_l" + std::to_string(i) + "_w.bin";
      e["w_shape"] = l->w.shape;
      e["f"] = l->scale.f;
      save_tensor_raw(dir / e["w"].get<std::string>(), l->w);
      if (!l->bias.data.empty()) {
        e["bias"] = stem + "_l" + std::to_string(i) + "_b.bin";
        save_tensor_raw(dir / e["bias"].get<std::string>(), l->bias);
      }
    } else if (const auto* l = std::get_if<AvgPool>(&layer)) {
      e["type"] = "avgpool";
      e["window"] = l->window;
      e["stride"] = l->stride;
    } else if (std::holds_alternative<Flatten>(layer)) {
      e["type"] = "flatten";
    } else {
      e["type"] = "relu";
    }
    layers.push_back(e);
  }
  j["layers"] = layers;

  std::ofstream os(manifest_path, std::ios::trunc);
  if (!os) throw ModelError("cannot write model manifest: " + manifest_path.string());
  os << j.dump(2) << "\n";
  if (!os) throw ModelError("short write on model manifest: " + manifest_path.string());
}

inline Model load_model(const std::filesystem::path& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw ModelError("cannot open model manifest: " + manifest_path.string());
  std::stringstream buf;
  buf << is.rdbuf();

  Model model;
  const std::filesystem::path dir = manifest_path.parent_path();
  try {
    nlohmann::json j = nlohmann::json::parse(buf.str());
    if (j.at("format").get<std::string>() != "circa-model-v1")
      throw ModelError("unsupported model format tag");
    try {
      model.fp = FieldParams::make(j.at("p").get<std::uint64_t>());
    } catch (const std::invalid_argument& e) {
      throw ModelError(std::string("bad modulus: ") + e.what());
    }
    model.input_scale.f = j.at("input_scale_f").get<int>();
    model.input_shape = j.at("input_shape").get<std::vector<std::size_t>>();
    for (const nlohmann::json& e : j.at("layers")) {
      const std::string type = e.at("type").get<std::string>();
      if (type == "conv2d") {
        Conv2D l;
        l.w = load_tensor_raw(dir / e.at("w").get<std::string>(),
                              e.at("w_shape").get<std::vector<std::size_t>>(), model.fp);
        l.stride = e.at("stride").get<std::size_t>();
        l.pad = e.at("pad").get<std::size_t>();
        l.scale.f = e.at("f").get<int>();
        model.layers.emplace_back(std::move(l));
      } else if (type == "fc") {
        FullyConnected l;
        std::vector<std::size_t> ws = e.at("w_shape").get<std::vector<std::size_t>>();
        if (ws.size() != 2) throw ModelError("fc w_shape must be rank 2");
        l.w = load_tensor_raw(dir / e.at("w").get<std::string>(), ws, model.fp);
        if (e.contains("bias"))
          l.bias = load_tensor_raw(dir / e.at("bias").get<std::string>(), {ws[0]}, model.fp);
        l.scale.f = e.at("f").get<int>();
        model.layers.emplace_back(std::move(l));
      } else if (type == "avgpool") {
        AvgPool l;
        l.window = e.at("window").get<std::size_t>();
        l.stride = e.at("stride").get<std::size_t>();
        model.layers.emplace_back(l);
      } else if (type == "flatten") {
        model.layers.emplace_back(Flatten{});
      } else if (type == "relu") {
        model.layers.emplace_back(Relu{});
      } else {
        throw ModelError("unknown layer type: " + type);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ModelError(std::string("malformed model manifest: ") + e.what());
  }
  validate_model(model);
  return model;
}

/// Labeled inputs for accuracy sweeps. JSON file, format tag
/// "circa-dataset-v1", inputs stored as decoded signed integers.
struct Dataset {
  std::vector<std::size_t> input_shape;
  std::vector<Tensor> inputs;
  std::vector<std::size_t> labels;
};

inline void save_dataset(const Dataset& ds, const std::filesystem::path& path,
                         const FieldParams& fp) {
  if (ds.inputs.size() != ds.labels.size()) throw ModelError("dataset inputs/labels mismatch");
  nlohmann::json j;
  j["format"] = "circa-dataset-v1";
  j["input_shape"] = ds.input_shape;
  nlohmann::json inputs = nlohmann::json::array();
  for (const Tensor& t : ds.inputs) {
    std::vector<std::int64_t> row(t.data.size());
    for (std::size_t i = 0; i < t.data.size(); ++i) row[i] = fp.decode(t.data[i]);
    inputs.push_back(row);
  }
  j["inputs"] = inputs;
  j["labels"] = ds.labels;
  std::filesystem::path dir = path.parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ModelError("cannot write dataset: " + path.string());
  os << j.dump() << "\n";
}

inline Dataset load_dataset(const std::filesystem::path& path, const FieldParams& fp) {
  std::ifstream is(path);
  if (!is) throw ModelError("cannot open dataset: " + path.string());
  std::stringstream buf;
  buf << is.rdbuf();
  Dataset ds;
  try {
    nlohmann::json j = nlohmann::json::parse(buf.str());
    if (j.at("format").get<std::string>() != "circa-dataset-v1")
      throw ModelError("unsupported dataset format tag");
    ds.input_shape = j.at("input_shape").get<std::vector<std::size_t>>();
    std::size_t n = 1;
    for (std::size_t d : ds.input_shape) n *= d;
    if (ds.input_shape.empty() || n == 0 || n > detail::kMaxTensorElems)
      throw ModelError("dataset input shape out of range");
    for (const nlohmann::json& row : j.at("inputs")) {
      Tensor t;
      t.shape = ds.input_shape;
      for (const nlohmann::json& v : row) {
        try {
          t.data.push_back(fp.encode(v.get<std::int64_t>()));
        } catch (const std::out_of_range& e) {
          throw ModelError(std::string("dataset value outside field range: ") + e.what());
        }
      }
      if (t.data.size() != n) throw ModelError("dataset row length mismatch");
      ds.inputs.push_back(std::move(t));
    }
    ds.labels = j.at("labels").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw ModelError(std::string("malformed dataset: ") + e.what());
  }
  if (ds.inputs.size() != ds.labels.size()) throw ModelError("dataset inputs/labels mismatch");
  return ds;
}

// ---------------------------------------------------------------------------
// Seeded generators and the accuracy/fault sweep.
// ---------------------------------------------------------------------------

/// Elements uniform on [-bound, bound].
inline Tensor random_tensor(std::vector<std::size_t> shape, std::int64_t bound, SplitMix64& rng,
                            const FieldParams& fp) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (FieldElement& e : t.data)
    e = fp.encode(static_cast<std::int64_t>(uniform_below(rng, 2 * bound + 1)) - bound);
  return t;
}

/// fc_layers fully connected layers with ReLU between them, dims
/// in_dim -> hidden_dim -> ... -> out_dim, weights and biases on [-bound, bound].
inline Model make_random_fc_model(const FieldParams& fp, std::uint64_t seed, int fc_layers,
                                  std::size_t in_dim, std::size_t hidden_dim, std::size_t out_dim,
                                  std::int64_t weight_bound) {
  if (fc_layers < 1) throw std::invalid_argument("make_random_fc_model: need at least one layer");
  if (weight_bound < 1 || weight_bound >= FixedPointScale::kMagnitudeCap)
    throw std::invalid_argument("make_random_fc_model: weight bound out of range");
  SplitMix64 rng = derived_stream(seed, 0x6D0DE1ULL, 0);
  Model m;
  m.fp = fp;
  m.input_shape = {in_dim};
  std::size_t cur = in_dim;
  for (int i = 0; i < fc_layers; ++i) {
    std::size_t next = (i + 1 == fc_layers) ? out_dim : hidden_dim;
    FullyConnected l;
    l.w = random_tensor({next, cur}, weight_bound, rng, fp);
    l.bias = random_tensor({next}, weight_bound, rng, fp);
    m.layers.emplace_back(std::move(l));
    if (i + 1 < fc_layers) m.layers.emplace_back(Relu{});
    cur = next;
  }
  validate_model(m);
  return m;
}

/// Inputs uniform on [-input_bound, input_bound], labels = plaintext argmax,
/// so exact inference scores 100% by construction.
inline Dataset make_labeled_dataset(const Model& model, std::uint64_t seed, std::size_t count,
                                    std::int64_t input_bound) {
  SplitMix64 rng = derived_stream(seed, 0xDA7A5E7ULL, 1);
  Dataset ds;
  ds.input_shape = model.input_shape;
  for (std::size_t i = 0; i < count; ++i) {
    Tensor x = random_tensor(model.input_shape, input_bound, rng, model.fp);
    ds.labels.push_back(argmax_logits(infer_plain(model, x), model.fp));
    ds.inputs.push_back(std::move(x));
  }
  return ds;
}

struct SweepPoint {
  int k = 0;
  FaultMode mode = FaultMode::kPosZero;
  double fault_rate = 0.0;
  double accuracy = 0.0;
};

/// Each sample gets its own derived seed (stable across k, so the fault events
/// at k are a subset of those at k+1 and fault_rate is monotone in k).
inline std::uint64_t sweep_sample_seed(std::uint64_t seed, std::size_t sample) {
  return mix_seed(mix_seed(seed, 0xDA7A5EEDULL), sample);
}

inline SweepPoint evaluate_sweep_point(const Model& model, const Dataset& ds,
                                       const StochasticReluConfig& cfg) {
  SweepPoint pt;
  pt.k = cfg.k;
  pt.mode = cfg.mode;
  std::size_t faults = 0, acts = 0, correct = 0;
  for (std::size_t i = 0; i < ds.inputs.size(); ++i) {
    StochasticReluConfig per = cfg;
    per.seed = sweep_sample_seed(cfg.seed, i);
    FaultStats st = teacher_forced_faults(model, ds.inputs[i], per);
    faults += st.faults;
    acts += st.activations;
    if (argmax_logits(infer_stochastic(model, ds.inputs[i], per), model.fp) == ds.labels[i])
      ++correct;
  }
  pt.fault_rate = acts == 0 ? 0.0 : static_cast<double>(faults) / static_cast<double>(acts);
  pt.accuracy =
      ds.inputs.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(ds.inputs.size());
  return pt;
}

inline double plain_accuracy(const Model& model, const Dataset& ds) {
  if (ds.inputs.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.inputs.size(); ++i)
    if (argmax_logits(infer_plain(model, ds.inputs[i]), model.fp) == ds.labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(ds.inputs.size());
}

}  // namespace circa
