// vibspoof/wav2vec2.hpp

// Copyright 2026  The vibspoof Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// Inference-only wav2vec 2.0 encoder reading Hugging Face checkpoints
// (config.json + model.safetensors), and the pretrained frontend adapter
// built on it.  Activations are float32, laid out channels x frames.

#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "vibspoof/common.hpp"
#include "vibspoof/frontend.hpp"

namespace vibspoof {

// Environment variable naming the pretrained model directory.
inline constexpr const char* kPretrainedDirEnv = "VIBSPOOF_PRETRAINED_DIR";

using MatrixF = Eigen::MatrixXf;
using VectorF = Eigen::VectorXf;
using RowMatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---------------------------------------------------------------------------
// safetensors: u64 little-endian header length, JSON header, raw payload.

struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;  // row-major

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
};

namespace internal {

inline float HalfToFloat(std::uint16_t h) {
  const std::uint32_t sign = (h & 0x8000u) << 16;
  std::uint32_t exp = (h >> 10) & 0x1f;
  std::uint32_t mant = h & 0x3ff;
  std::uint32_t bits;
  if (exp == 0) {
    if (mant == 0) {
      bits = sign;
    } else {
      exp = 127 - 15 + 1;
      while ((mant & 0x400) == 0) {
        mant <<= 1;
        --exp;
      }
      mant &= 0x3ff;
      bits = sign | (exp << 23) | (mant << 13);
    }
  } else if (exp == 31) {
    bits = sign | 0x7f800000u | (mant << 13);
  } else {
    bits = sign | ((exp + 127 - 15) << 23) | (mant << 13);
  }
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

}  // namespace internal

inline std::map<std::string, Tensor> LoadSafetensors(const std::string& path,
                                                     Fnv1a64* content_hash = nullptr) {
  const std::string bytes = ReadFileToString(path);
  if (content_hash) content_hash->Update(bytes);
  if (bytes.size() < 8) throw ParseError(path + ": truncated safetensors file");
  std::uint64_t header_len = 0;
  for (int i = 7; i >= 0; --i) header_len = (header_len << 8) | static_cast<unsigned char>(bytes[i]);
  if (8 + header_len > bytes.size()) throw ParseError(path + ": bad safetensors header length");
  const auto header = nlohmann::json::parse(bytes.substr(8, header_len), nullptr, false);
  if (header.is_discarded() || !header.is_object()) {
    throw ParseError(path + ": unreadable safetensors header");
  }
  const char* payload = bytes.data() + 8 + header_len;
  const std::size_t payload_size = bytes.size() - 8 - header_len;
  std::map<std::string, Tensor> out;
  for (const auto& [name, info] : header.items()) {
    if (name == "__metadata__") continue;
    Tensor t;
    t.shape = info.at("shape").get<std::vector<std::int64_t>>();
    const auto offsets = info.at("data_offsets").get<std::vector<std::size_t>>();
    const std::string dtype = info.at("dtype").get<std::string>();
    if (offsets.size() != 2 || offsets[1] > payload_size || offsets[0] > offsets[1]) {
      throw ParseError(path + ": bad offsets for tensor '" + name + "'");
    }
    const char* p = payload + offsets[0];
    const std::size_t n = static_cast<std::size_t>(t.numel());
    std::size_t width = dtype == "F64" ? 8 : dtype == "F32" ? 4 : (dtype == "F16" || dtype == "BF16") ? 2 : 0;
    if (width == 0) throw ParseError(path + ": unsupported dtype " + dtype + " for '" + name + "'");
    if (n * width != offsets[1] - offsets[0]) {
      throw ParseError(path + ": size mismatch for tensor '" + name + "'");
    }
    t.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (dtype == "F32") {
        std::memcpy(&t.data[i], p + 4 * i, 4);
      } else if (dtype == "F64") {
        double d;
        std::memcpy(&d, p + 8 * i, 8);
        t.data[i] = static_cast<float>(d);
      } else {
        std::uint16_t h;
        std::memcpy(&h, p + 2 * i, 2);
        if (dtype == "F16") {
          t.data[i] = internal::HalfToFloat(h);
        } else {
          const std::uint32_t bits = std::uint32_t(h) << 16;
          std::memcpy(&t.data[i], &bits, 4);
        }
      }
    }
    out.emplace(name, std::move(t));
  }
  return out;
}

// ---------------------------------------------------------------------------

struct Wav2Vec2Config {
  std::vector<int> conv_dim{512, 512, 512, 512, 512, 512, 512};
  std::vector<int> conv_kernel{10, 3, 3, 3, 3, 2, 2};
  std::vector<int> conv_stride{5, 2, 2, 2, 2, 2, 2};
  bool conv_bias = false;
  bool group_norm_extractor = true;  // feat_extract_norm == "group"
  bool stable_layer_norm = false;
  int hidden_size = 768;
  int num_layers = 12;
  int num_heads = 12;
  int intermediate_size = 3072;
  int pos_kernel = 128;
  int pos_groups = 16;
  float layer_norm_eps = 1e-5f;
  bool normalize_input = true;

  static Wav2Vec2Config FromJson(const nlohmann::json& j) {
    Wav2Vec2Config c;
    auto get = [&](const char* key, auto* dst) {
      if (j.contains(key)) *dst = j.at(key).get<std::decay_t<decltype(*dst)>>();
    };
    get("conv_dim", &c.conv_dim);
    get("conv_kernel", &c.conv_kernel);
    get("conv_stride", &c.conv_stride);
    get("conv_bias", &c.conv_bias);
    get("do_stable_layer_norm", &c.stable_layer_norm);
    get("hidden_size", &c.hidden_size);
    get("num_hidden_layers", &c.num_layers);
    get("num_attention_heads", &c.num_heads);
    get("intermediate_size", &c.intermediate_size);
    get("num_conv_pos_embeddings", &c.pos_kernel);
    get("num_conv_pos_embedding_groups", &c.pos_groups);
    get("layer_norm_eps", &c.layer_norm_eps);
    if (j.contains("feat_extract_norm")) {
      const auto norm = j.at("feat_extract_norm").get<std::string>();
      if (norm != "group" && norm != "layer") {
        throw ParseError("unsupported feat_extract_norm '" + norm + "'");
      }
      c.group_norm_extractor = norm == "group";
    }
    for (const char* act : {"hidden_act", "feat_extract_activation"}) {
      if (j.contains(act) && j.at(act).get<std::string>() != "gelu") {
        throw ParseError(std::string("unsupported ") + act + " '" +
                         j.at(act).get<std::string>() + "'");
      }
    }
    if (j.value("add_adapter", false)) throw ParseError("wav2vec2 adapters are not supported");
    if (c.conv_dim.size() != c.conv_kernel.size() || c.conv_dim.size() != c.conv_stride.size() ||
        c.conv_dim.empty()) {
      throw ParseError("inconsistent conv_dim / conv_kernel / conv_stride lengths");
    }
    if (c.hidden_size % c.num_heads != 0 || c.hidden_size % c.pos_groups != 0) {
      throw ParseError("hidden_size not divisible by head / group count");
    }
    return c;
  }
};

namespace internal {

inline float Gelu(float x) { return 0.5f * x * (1.0f + std::erf(x * 0.70710678118654752f)); }

inline void GeluInPlace(MatrixF& m) { m = m.unaryExpr([](float v) { return Gelu(v); }); }

// Normalizes each column (frame) over its rows (channels).
inline void LayerNormColumns(MatrixF& x, const VectorF& gamma, const VectorF& beta, float eps) {
  for (Eigen::Index t = 0; t < x.cols(); ++t) {
    auto col = x.col(t);
    const float mean = col.mean();
    const float var = (col.array() - mean).square().mean();
    col = ((col.array() - mean) / std::sqrt(var + eps)).matrix();
    col = (col.array() * gamma.array() + beta.array()).matrix();
  }
}

// Normalizes each row (channel) over time, as GroupNorm with one group per
// channel does.
inline void NormalizeRows(MatrixF& x, const VectorF& gamma, const VectorF& beta, float eps) {
  for (Eigen::Index c = 0; c < x.rows(); ++c) {
    auto row = x.row(c);
    const float mean = row.mean();
    const float var = (row.array() - mean).square().mean();
    row = ((row.array() - mean) / std::sqrt(var + eps) * gamma[c] + beta[c]).matrix();
  }
}

// Grouped 1-D convolution.  `weight` is out x (in/groups * kernel) with the
// torch layout [out][in][k] flattened row-major.
inline MatrixF Conv1d(const MatrixF& x, const RowMatrixF& weight, const VectorF* bias, int kernel,
                      int stride, int padding, int groups) {
  const Eigen::Index in_ch = x.rows();
  const Eigen::Index out_ch = weight.rows();
  const Eigen::Index in_g = in_ch / groups;
  const Eigen::Index out_g = out_ch / groups;
  const Eigen::Index t_in = x.cols();
  const Eigen::Index t_out = (t_in + 2 * padding - kernel) / stride + 1;
  if (t_out <= 0) throw ValidationError("input too short for the wav2vec2 feature encoder");
  MatrixF y(out_ch, t_out);
  MatrixF cols(in_g * kernel, t_out);
  for (int g = 0; g < groups; ++g) {
    for (Eigen::Index t = 0; t < t_out; ++t) {
      const Eigen::Index base = t * stride - padding;
      for (Eigen::Index ci = 0; ci < in_g; ++ci) {
        for (int k = 0; k < kernel; ++k) {
          const Eigen::Index s = base + k;
          cols(ci * kernel + k, t) = (s >= 0 && s < t_in) ? x(g * in_g + ci, s) : 0.0f;
        }
      }
    }
    y.middleRows(g * out_g, out_g).noalias() = weight.middleRows(g * out_g, out_g) * cols;
  }
  if (bias) y.colwise() += *bias;
  return y;
}

}  // namespace internal

class Wav2Vec2Encoder {
 public:
  Wav2Vec2Encoder(Wav2Vec2Config config, std::map<std::string, Tensor> tensors)
      : config_(std::move(config)) {
    // Checkpoints from task heads prefix every name with "wav2vec2.".
    for (auto& [name, t] : tensors) {
      std::string key = name;
      if (key.rfind("wav2vec2.", 0) == 0) key = key.substr(9);
      tensors_.emplace(std::move(key), std::move(t));
    }
    Build();
    tensors_.clear();
  }

  static Wav2Vec2Encoder FromDirectory(const std::filesystem::path& dir,
                                       std::string* version_hash = nullptr) {
    const auto cfg_path = dir / "config.json";
    const auto weights_path = dir / "model.safetensors";
    if (!std::filesystem::exists(cfg_path) || !std::filesystem::exists(weights_path)) {
      throw IoError("pretrained model directory '" + dir.string() +
                    "' must contain config.json and model.safetensors");
    }
    const std::string cfg_text = ReadFileToString(cfg_path.string());
    const auto j = nlohmann::json::parse(cfg_text, nullptr, false);
    if (j.is_discarded()) throw ParseError(cfg_path.string() + ": invalid JSON");
    Wav2Vec2Config cfg = Wav2Vec2Config::FromJson(j);
    const auto pre = dir / "preprocessor_config.json";
    if (std::filesystem::exists(pre)) {
      const auto pj = nlohmann::json::parse(ReadFileToString(pre.string()), nullptr, false);
      if (!pj.is_discarded()) cfg.normalize_input = pj.value("do_normalize", true);
    }
    Fnv1a64 hash;
    hash.Update(cfg_text);
    auto tensors = LoadSafetensors(weights_path.string(), &hash);
    if (version_hash) *version_hash = hash.hex();
    return Wav2Vec2Encoder(std::move(cfg), std::move(tensors));
  }

  const Wav2Vec2Config& config() const { return config_; }

  // Final-layer context vectors, hidden_size x frames.
  MatrixF Forward(std::span<const double> samples) const {
    using namespace internal;
    if (samples.empty()) throw ValidationError("cannot encode an empty waveform");
    MatrixF x(1, static_cast<Eigen::Index>(samples.size()));
    double mean = 0.0, var = 0.0;
    if (config_.normalize_input) {
      for (double s : samples) mean += s;
      mean /= static_cast<double>(samples.size());
      for (double s : samples) var += (s - mean) * (s - mean);
      var /= static_cast<double>(samples.size());
    }
    const double scale = config_.normalize_input ? 1.0 / std::sqrt(var + 1e-7) : 1.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      x(0, static_cast<Eigen::Index>(i)) = static_cast<float>((samples[i] - mean) * scale);
    }

    for (std::size_t l = 0; l < convs_.size(); ++l) {
      const auto& c = convs_[l];
      x = Conv1d(x, c.weight, c.bias.size() ? &c.bias : nullptr, config_.conv_kernel[l],
                 config_.conv_stride[l], 0, 1);
      if (config_.group_norm_extractor) {
        if (l == 0) NormalizeRows(x, c.norm_gamma, c.norm_beta, 1e-5f);
      } else {
        LayerNormColumns(x, c.norm_gamma, c.norm_beta, 1e-5f);
      }
      GeluInPlace(x);
    }

    LayerNormColumns(x, proj_norm_gamma_, proj_norm_beta_, config_.layer_norm_eps);
    MatrixF h = proj_weight_ * x;
    h.colwise() += proj_bias_;

    MatrixF pos = Conv1d(h, pos_weight_, &pos_bias_, config_.pos_kernel, 1,
                         config_.pos_kernel / 2, config_.pos_groups);
    if (config_.pos_kernel % 2 == 0) pos.conservativeResize(Eigen::NoChange, pos.cols() - 1);
    GeluInPlace(pos);
    h += pos;
    if (!config_.stable_layer_norm) {
      LayerNormColumns(h, enc_norm_gamma_, enc_norm_beta_, config_.layer_norm_eps);
    }
    for (const auto& layer : layers_) {
      if (config_.stable_layer_norm) {
        MatrixF n = h;
        LayerNormColumns(n, layer.ln1_gamma, layer.ln1_beta, config_.layer_norm_eps);
        h += Attention(layer, n);
        MatrixF m = h;
        LayerNormColumns(m, layer.ln2_gamma, layer.ln2_beta, config_.layer_norm_eps);
        h += FeedForward(layer, m);
      } else {
        h += Attention(layer, h);
        LayerNormColumns(h, layer.ln1_gamma, layer.ln1_beta, config_.layer_norm_eps);
        h += FeedForward(layer, h);
        LayerNormColumns(h, layer.ln2_gamma, layer.ln2_beta, config_.layer_norm_eps);
      }
    }
    if (config_.stable_layer_norm) {
      LayerNormColumns(h, enc_norm_gamma_, enc_norm_beta_, config_.layer_norm_eps);
    }
    return h;
  }

 private:
  struct ConvLayer {
    RowMatrixF weight;
    VectorF bias;
    VectorF norm_gamma, norm_beta;
  };
  struct Layer {
    MatrixF q_w, k_w, v_w, o_w;
    VectorF q_b, k_b, v_b, o_b;
    VectorF ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
    MatrixF ff1_w, ff2_w;
    VectorF ff1_b, ff2_b;
  };

  const Tensor& Get(const std::string& name, std::vector<std::int64_t> shape) const {
    const auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ParseError("checkpoint lacks tensor '" + name + "'");
    if (it->second.shape != shape) throw ParseError("tensor '" + name + "' has unexpected shape");
    return it->second;
  }
  VectorF Vec(const std::string& name, std::int64_t n) const {
    const auto& t = Get(name, {n});
    return Eigen::Map<const VectorF>(t.data.data(), n);
  }
  MatrixF Linear(const std::string& name, std::int64_t out, std::int64_t in) const {
    const auto& t = Get(name, {out, in});
    return Eigen::Map<const RowMatrixF>(t.data.data(), out, in);
  }

  void Build() {
    const auto& c = config_;
    const std::int64_t hid = c.hidden_size;
    for (std::size_t l = 0; l < c.conv_dim.size(); ++l) {
      const std::string p = "feature_extractor.conv_layers." + std::to_string(l) + ".";
      const std::int64_t in = l == 0 ? 1 : c.conv_dim[l - 1];
      const std::int64_t out = c.conv_dim[l];
      ConvLayer layer;
      const auto& w = Get(p + "conv.weight", {out, in, c.conv_kernel[l]});
      layer.weight = Eigen::Map<const RowMatrixF>(w.data.data(), out, in * c.conv_kernel[l]);
      if (c.conv_bias) layer.bias = Vec(p + "conv.bias", out);
      if (!c.group_norm_extractor || l == 0) {
        layer.norm_gamma = Vec(p + "layer_norm.weight", out);
        layer.norm_beta = Vec(p + "layer_norm.bias", out);
      }
      convs_.push_back(std::move(layer));
    }
    const std::int64_t feat = c.conv_dim.back();
    proj_norm_gamma_ = Vec("feature_projection.layer_norm.weight", feat);
    proj_norm_beta_ = Vec("feature_projection.layer_norm.bias", feat);
    proj_weight_ = Linear("feature_projection.projection.weight", hid, feat);
    proj_bias_ = Vec("feature_projection.projection.bias", hid);

    // Weight-normalized positional convolution: w = g * v / ||v||, with the
    // norm taken over (out, in) separately for every kernel tap.
    const std::int64_t in_g = hid / c.pos_groups;
    const std::int64_t k = c.pos_kernel;
    const std::string pp = "encoder.pos_conv_embed.conv.";
    const bool legacy = tensors_.count(pp + "weight_g") > 0;
    const auto& g = Get(pp + (legacy ? "weight_g" : "parametrizations.weight.original0"), {1, 1, k});
    const auto& v = Get(pp + (legacy ? "weight_v" : "parametrizations.weight.original1"), {hid, in_g, k});
    std::vector<double> norms(static_cast<std::size_t>(k), 0.0);
    for (std::int64_t i = 0; i < hid * in_g; ++i) {
      for (std::int64_t t = 0; t < k; ++t) {
        const double val = v.data[static_cast<std::size_t>(i * k + t)];
        norms[static_cast<std::size_t>(t)] += val * val;
      }
    }
    pos_weight_.resize(hid, in_g * k);
    for (std::int64_t i = 0; i < hid * in_g; ++i) {
      for (std::int64_t t = 0; t < k; ++t) {
        const double scale = g.data[static_cast<std::size_t>(t)] / std::sqrt(norms[static_cast<std::size_t>(t)]);
        pos_weight_(i / in_g, (i % in_g) * k + t) =
            static_cast<float>(v.data[static_cast<std::size_t>(i * k + t)] * scale);
      }
    }
    pos_bias_ = Vec(pp + "bias", hid);
    enc_norm_gamma_ = Vec("encoder.layer_norm.weight", hid);
    enc_norm_beta_ = Vec("encoder.layer_norm.bias", hid);

    for (int l = 0; l < c.num_layers; ++l) {
      const std::string p = "encoder.layers." + std::to_string(l) + ".";
      Layer layer;
      layer.q_w = Linear(p + "attention.q_proj.weight", hid, hid);
      layer.k_w = Linear(p + "attention.k_proj.weight", hid, hid);
      layer.v_w = Linear(p + "attention.v_proj.weight", hid, hid);
      layer.o_w = Linear(p + "attention.out_proj.weight", hid, hid);
      layer.q_b = Vec(p + "attention.q_proj.bias", hid);
      layer.k_b = Vec(p + "attention.k_proj.bias", hid);
      layer.v_b = Vec(p + "attention.v_proj.bias", hid);
      layer.o_b = Vec(p + "attention.out_proj.bias", hid);
      layer.ln1_gamma = Vec(p + "layer_norm.weight", hid);
      layer.ln1_beta = Vec(p + "layer_norm.bias", hid);
      layer.ln2_gamma = Vec(p + "final_layer_norm.weight", hid);
      layer.ln2_beta = Vec(p + "final_layer_norm.bias", hid);
      layer.ff1_w = Linear(p + "feed_forward.intermediate_dense.weight", c.intermediate_size, hid);
      layer.ff1_b = Vec(p + "feed_forward.intermediate_dense.bias", c.intermediate_size);
      layer.ff2_w = Linear(p + "feed_forward.output_dense.weight", hid, c.intermediate_size);
      layer.ff2_b = Vec(p + "feed_forward.output_dense.bias", hid);
      layers_.push_back(std::move(layer));
    }
  }

  MatrixF Attention(const Layer& layer, const MatrixF& h) const {
    const int heads = config_.num_heads;
    const Eigen::Index d = config_.hidden_size / heads;
    const float scaling = 1.0f / std::sqrt(static_cast<float>(d));
    MatrixF q = layer.q_w * h;
    q.colwise() += layer.q_b;
    q *= scaling;
    MatrixF k = layer.k_w * h;
    k.colwise() += layer.k_b;
    MatrixF v = layer.v_w * h;
    v.colwise() += layer.v_b;
    MatrixF ctx(h.rows(), h.cols());
    for (int i = 0; i < heads; ++i) {
      // scores(j, t): key j against query t; softmax over j per column.
      MatrixF scores = k.middleRows(i * d, d).transpose() * q.middleRows(i * d, d);
      for (Eigen::Index t = 0; t < scores.cols(); ++t) {
        auto col = scores.col(t);
        col = (col.array() - col.maxCoeff()).exp().matrix();
        col /= col.sum();
      }
      ctx.middleRows(i * d, d).noalias() = v.middleRows(i * d, d) * scores;
    }
    MatrixF out = layer.o_w * ctx;
    out.colwise() += layer.o_b;
    return out;
  }

  MatrixF FeedForward(const Layer& layer, const MatrixF& h) const {
    MatrixF a = layer.ff1_w * h;
    a.colwise() += layer.ff1_b;
    internal::GeluInPlace(a);
    MatrixF out = layer.ff2_w * a;
    out.colwise() += layer.ff2_b;
    return out;
  }

  Wav2Vec2Config config_;
  std::map<std::string, Tensor> tensors_;
  std::vector<ConvLayer> convs_;
  VectorF proj_norm_gamma_, proj_norm_beta_, proj_bias_;
  MatrixF proj_weight_;
  RowMatrixF pos_weight_;
  VectorF pos_bias_;
  VectorF enc_norm_gamma_, enc_norm_beta_;
  std::vector<Layer> layers_;
};

// Pretrained adapter: time-mean of the final-layer context vectors.
class PretrainedFrontend : public Frontend {
 public:
  PretrainedFrontend(Wav2Vec2Encoder encoder, std::string version, int sample_rate = 16000)
      : encoder_(std::move(encoder)), version_(std::move(version)), sample_rate_(sample_rate) {}

  // Loads from `dir`, or from $VIBSPOOF_PRETRAINED_DIR when `dir` is empty.
  static std::unique_ptr<PretrainedFrontend> Load(const FrontendSpec& spec,
                                                  std::filesystem::path dir = {}) {
    if (dir.empty()) {
      const char* env = std::getenv(kPretrainedDirEnv);
      if (env == nullptr || *env == '\0') {
        throw ConfigError(std::string("the pretrained frontend needs ") + kPretrainedDirEnv +
                          " to name a directory holding config.json and model.safetensors");
      }
      dir = env;
    }
    std::string version;
    auto encoder = Wav2Vec2Encoder::FromDirectory(dir, &version);
    if (encoder.config().hidden_size != spec.output_dim) {
      throw ConfigError("pretrained model hidden size " +
                        std::to_string(encoder.config().hidden_size) +
                        " does not match output_dim " + std::to_string(spec.output_dim));
    }
    return std::make_unique<PretrainedFrontend>(std::move(encoder), version, spec.sample_rate);
  }

  FrontendKind kind() const override { return FrontendKind::kPretrained; }
  int output_dim() const override { return encoder_.config().hidden_size; }
  int encoded_dim() const override { return output_dim(); }
  int sample_rate() const override { return sample_rate_; }
  std::string VersionHash() const override { return version_; }

  Eigen::VectorXd Encode(std::span<const double> samples) const override {
    const MatrixF h = encoder_.Forward(samples);
    return h.rowwise().mean().cast<double>();
  }

  const Wav2Vec2Encoder& encoder() const { return encoder_; }

 private:
  Wav2Vec2Encoder encoder_;
  std::string version_;
  int sample_rate_;
};

}  // namespace vibspoof
