#include "tfgrasp/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <tuple>

namespace tfgrasp {
namespace {

std::string stage_name(const char* part, int stage) { return std::string(part) + ".stage" + std::to_string(stage); }

std::shared_ptr<const WindowLayout> cached_layout(Index height, Index width, Index window, Index shift) {
  static std::mutex mutex;
  static std::map<std::tuple<Index, Index, Index, Index>, std::shared_ptr<const WindowLayout>> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto& slot = cache[{height, width, window, shift}];
  if (!slot) slot = std::make_shared<const WindowLayout>(make_window_layout(height, width, window, shift));
  return slot;
}

template <typename Scalar>
Tensor<Scalar> run_block(const Tensor<Scalar>& x, const ParamSet<Scalar>& params, const std::string& prefix,
                         Index grid, Index window) {
  const auto local = cached_layout(grid, grid, window, 0);
  const auto shifted = cached_layout(grid, grid, window, window / 2);
  return swin_block(x, swin_block_params(params, prefix), *local, *shifted);
}

}  // namespace

Index input_channels(InputMode mode) {
  switch (mode) {
    case InputMode::kDepth:
      return 1;
    case InputMode::kRgb:
      return 3;
    case InputMode::kRgbd:
      return 4;
  }
  return 0;
}

std::string to_string(InputMode mode) {
  switch (mode) {
    case InputMode::kDepth:
      return "d";
    case InputMode::kRgb:
      return "rgb";
    case InputMode::kRgbd:
      return "rgbd";
  }
  return "?";
}

InputMode parse_input_mode(const std::string& text) {
  std::string t;
  for (char c : text) {
    if (c != '-') t.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  if (t == "d" || t == "depth") return InputMode::kDepth;
  if (t == "rgb") return InputMode::kRgb;
  if (t == "rgbd") return InputMode::kRgbd;
  throw ConfigError("unknown input mode '" + text + "' (expected d, rgb or rgbd)");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (in_channels <= 0) fail("input channels must be positive");
  if (patch_size <= 0 || window <= 0) fail("patch and window sizes must be positive");
  if (embed_dim <= 0 || embed_dim % 4 != 0) fail("embed dim must be a positive multiple of 4");
  if (resolution <= 0 || resolution % patch_size != 0) {
    fail("resolution " + std::to_string(resolution) + " is not divisible by patch size " + std::to_string(patch_size));
  }
  Index grid = resolution / patch_size;
  for (int s = 0; s < kStages; ++s) {
    if (grid % window != 0) {
      fail("stage " + std::to_string(s) + " grid " + std::to_string(grid) + " is not divisible by window " +
           std::to_string(window));
    }
    if (s + 1 < kStages) {
      if (grid % 2 != 0) fail("stage " + std::to_string(s) + " grid " + std::to_string(grid) + " is odd");
      grid /= 2;
    }
    const Index h = heads[static_cast<std::size_t>(s)];
    if (h <= 0 || stage_dim(s) % h != 0) {
      fail("stage " + std::to_string(s) + " width " + std::to_string(stage_dim(s)) + " not divisible by " +
           std::to_string(h) + " heads");
    }
  }
}

template <typename Scalar>
ParamSet<Scalar> init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ParamSet<Scalar> set(seed);
  const Index d = config.embed_dim;
  const Index p = config.patch_size;
  set.normal("patch_embed.kernel", {d, config.in_channels, p, p});
  set.zeros("patch_embed.bias", {d});
  set.ones("patch_embed.norm.gamma", {d});
  set.zeros("patch_embed.norm.beta", {d});
  for (int s = 0; s < kStages; ++s) {
    const Index c = config.stage_dim(s);
    register_swin_block(set, stage_name("enc", s), c, config.heads[static_cast<std::size_t>(s)], config.window);
    if (s + 1 < kStages) set.normal(stage_name("enc", s) + ".merge.w", {4 * c, 2 * c});
  }
  register_swin_block(set, "bottleneck", config.stage_dim(kStages - 1), config.heads[kStages - 1], config.window);
  for (int s = kStages - 1; s >= 0; --s) {
    const Index c = config.stage_dim(s);
    const std::string prefix = stage_name("dec", s);
    if (config.use_skips) {
      set.normal(prefix + ".skip.w", {2 * c, c});
      set.zeros(prefix + ".skip.b", {c});
    }
    register_swin_block(set, prefix, c, config.heads[static_cast<std::size_t>(s)], config.window);
    if (s > 0) set.normal(prefix + ".expand.w", {c, 2 * c});
  }
  set.ones("dec.norm.gamma", {d});
  set.zeros("dec.norm.beta", {d});
  set.normal("final.expand1.w", {d, 2 * d});
  set.normal("final.expand2.w", {d / 2, d});
  for (const char* head : {"quality", "cos", "sin", "width"}) {
    set.normal(std::string("head.") + head + ".w", {d / 4, 1});
    set.zeros(std::string("head.") + head + ".b", {1});
  }
  return set;
}

template <typename Scalar>
ModelConfig infer_config(const ParamSet<Scalar>& params, Index resolution) {
  ModelConfig config;
  const auto& kernel = params.at("patch_embed.kernel");
  if (kernel.rank() != 4) throw ConfigError("patch_embed.kernel must be rank 4");
  config.embed_dim = kernel.dim(0);
  config.in_channels = kernel.dim(1);
  config.patch_size = kernel.dim(2);
  const Index table = params.at("enc.stage0.wmsa.attn.bias_table").dim(1);
  const auto span = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(table))));
  if (span * span != table || span % 2 == 0) throw ConfigError("relative position table has an invalid size");
  config.window = (span + 1) / 2;
  for (int s = 0; s < kStages; ++s) {
    config.heads[static_cast<std::size_t>(s)] = params.at(stage_name("enc", s) + ".wmsa.attn.bias_table").dim(0);
  }
  config.use_skips = params.contains("dec.stage0.skip.w");
  config.resolution = resolution;
  config.validate();
  return config;
}

template <typename Scalar>
Tensor<Scalar> patch_embed(const Tensor<Scalar>& images, const ParamSet<Scalar>& params, const ModelConfig& config) {
  if (images.rank() != 4) throw ShapeError("patch_embed expects [B, C, H, W], got " + shape_string(images.shape()));
  if (images.dim(1) != config.in_channels) {
    throw ConfigError("model expects " + std::to_string(config.in_channels) + " input channels, image has " +
                      std::to_string(images.dim(1)));
  }
  const Index b = images.dim(0);
  auto grid = strided_conv2d(images, params.at("patch_embed.kernel"), params.at("patch_embed.bias"),
                             config.patch_size);  // [B, D, h, w]
  const Index d = grid.dim(1), h = grid.dim(2), w = grid.dim(3);
  auto tokens = permute(grid, {0, 2, 3, 1}).reshape(Shape{b * h * w, d});
  return layer_norm(tokens, params.at("patch_embed.norm.gamma"), params.at("patch_embed.norm.beta"));
}

template <typename Scalar>
Tensor<Scalar> patch_merge(const Tensor<Scalar>& x, const Tensor<Scalar>& w, Index height, Index width) {
  if (height % 2 != 0 || width % 2 != 0) {
    throw ShapeError("patch_merge needs even spatial size, got " + std::to_string(height) + "x" +
                     std::to_string(width));
  }
  const Index c = x.dim(-1);
  const Index per_image = height * width;
  if (x.numel() % (per_image * c) != 0) throw ShapeError("patch_merge: tokens do not form the stated map");
  const Index batch = x.numel() / (per_image * c);
  const Index oh = height / 2, ow = width / 2;
  auto rows = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(batch * per_image));
  auto it = rows->begin();
  for (Index b = 0; b < batch; ++b)
    for (Index i = 0; i < oh; ++i)
      for (Index j = 0; j < ow; ++j)
        for (Index di = 0; di < 2; ++di)
          for (Index dj = 0; dj < 2; ++dj) *it++ = b * per_image + (2 * i + di) * width + 2 * j + dj;
  auto grouped = gather_rows(x.reshape(Shape{batch * per_image, c}), std::move(rows));
  return linear(grouped.reshape(Shape{batch * oh * ow, 4 * c}), w, Tensor<Scalar>());
}

template <typename Scalar>
Tensor<Scalar> patch_expand(const Tensor<Scalar>& x, const Tensor<Scalar>& w, Index height, Index width) {
  const Index c = x.dim(-1);
  if (c % 2 != 0) throw ShapeError("patch_expand needs an even channel count, got " + std::to_string(c));
  const Index per_image = height * width;
  if (x.numel() % (per_image * c) != 0) throw ShapeError("patch_expand: tokens do not form the stated map");
  const Index batch = x.numel() / (per_image * c);
  auto projected = linear(x.reshape(Shape{batch * per_image, c}), w, Tensor<Scalar>());
  const Index out_c = projected.dim(-1) / 4;
  if (out_c * 4 != projected.dim(-1)) throw ShapeError("patch_expand: projection width must be divisible by 4");
  const Index oh = 2 * height, ow = 2 * width;
  auto rows = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(batch * oh * ow));
  auto it = rows->begin();
  for (Index b = 0; b < batch; ++b)
    for (Index i = 0; i < oh; ++i)
      for (Index j = 0; j < ow; ++j) *it++ = ((b * per_image + (i / 2) * width + j / 2) * 4) + (i % 2) * 2 + j % 2;
  return gather_rows(projected.reshape(Shape{batch * per_image * 4, out_c}), std::move(rows));
}

template <typename Scalar>
Tensor<Scalar> forward(const Tensor<Scalar>& images, const ParamSet<Scalar>& params, const ModelConfig& config,
                       ForwardTrace<Scalar>* trace) {
  config.validate();
  const Tensor<Scalar> batch =
      images.rank() == 3 ? images.reshape(Shape{1, images.dim(0), images.dim(1), images.dim(2)}) : images;
  if (batch.rank() != 4 || batch.dim(2) != config.resolution || batch.dim(3) != config.resolution) {
    throw ConfigError("model expects [B, " + std::to_string(config.in_channels) + ", " +
                      std::to_string(config.resolution) + ", " + std::to_string(config.resolution) + "] input, got " +
                      shape_string(images.shape()));
  }
  if (config.use_skips && !params.contains("dec.stage0.skip.w")) {
    throw ConfigError("skip connections requested but the parameters have no skip projections");
  }
  const Index b = batch.dim(0);

  auto x = patch_embed(batch, params, config);
  std::array<Tensor<Scalar>, kStages> skips;
  for (int s = 0; s < kStages; ++s) {
    const Index grid = config.stage_grid(s);
    x = run_block(x, params, stage_name("enc", s), grid, config.window);
    skips[static_cast<std::size_t>(s)] = x;
    if (trace) {
      trace->encoder_grids.push_back(grid);
      trace->encoder_outputs.push_back(x);
    }
    if (s + 1 < kStages) x = patch_merge(x, params.at(stage_name("enc", s) + ".merge.w"), grid, grid);
  }
  x = run_block(x, params, "bottleneck", config.stage_grid(kStages - 1), config.window);
  if (trace) trace->bottleneck = x;

  for (int s = kStages - 1; s >= 0; --s) {
    const Index grid = config.stage_grid(s);
    const std::string prefix = stage_name("dec", s);
    if (config.use_skips) {
      const std::array<Tensor<Scalar>, 2> parts{x, skips[static_cast<std::size_t>(s)]};
      x = linear(concat<Scalar>(parts, -1), params.at(prefix + ".skip.w"), params.at(prefix + ".skip.b"));
    }
    x = run_block(x, params, prefix, grid, config.window);
    if (trace) {
      trace->decoder_grids.push_back(grid);
      trace->decoder_outputs.push_back(x);
    }
    if (s > 0) x = patch_expand(x, params.at(prefix + ".expand.w"), grid, grid);
  }

  const Index g0 = config.stage_grid(0);
  x = layer_norm(x, params.at("dec.norm.gamma"), params.at("dec.norm.beta"));
  x = patch_expand(x, params.at("final.expand1.w"), g0, g0);
  x = patch_expand(x, params.at("final.expand2.w"), 2 * g0, 2 * g0);
  if (trace) trace->pixel_features = x;

  auto head = [&](const char* name) {
    return linear(x, params.at(std::string("head.") + name + ".w"), params.at(std::string("head.") + name + ".b"));
  };
  const std::array<Tensor<Scalar>, 4> maps{sigmoid(head("quality")), head("cos"), head("sin"), head("width")};
  const Index res = config.resolution;
  auto out = concat<Scalar>(maps, -1).reshape(Shape{b, res, res, 4});
  out = permute(out, {0, 3, 1, 2});
  if (images.rank() == 3) return out.reshape(Shape{4, res, res});
  return out;
}

namespace {

void put_u8(std::string& s, std::uint8_t v) { s.push_back(static_cast<char>(v)); }
void put_u16(std::string& s, std::uint16_t v) {
  for (int i = 0; i < 2; ++i) put_u8(s, static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) put_u8(s, static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::string& s, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) put_u8(s, static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}
  std::uint64_t take(int width) {
    if (pos_ + static_cast<std::size_t>(width) > bytes_.size()) throw FormatError("checkpoint truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= std::uint64_t(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::string take_bytes(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw FormatError("checkpoint truncated");
    std::string out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const ParamSet<float>& params) {
  std::string out = "TFGR";
  put_u32(out, 1);
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& name = params.names()[k];
    const auto& t = params.tensors()[k];
    if (name.size() > 0xffff) throw FormatError("parameter name too long: " + name);
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    put_u8(out, static_cast<std::uint8_t>(t.rank()));
    for (Index d : t.shape()) put_u64(out, static_cast<std::uint64_t>(d));
    for (float v : t.data()) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      put_u32(out, bits);
    }
  }
  return out;
}

ParamSet<float> decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.take_bytes(4) != "TFGR") throw FormatError("not a TFGR checkpoint (bad magic)");
  const auto version = r.take(4);
  if (version != 1) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto count = r.take(4);
  ParamSet<float> params;
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto len = r.take(2);
    std::string name = r.take_bytes(len);
    const auto rank = r.take(1);
    Shape shape;
    for (std::uint64_t i = 0; i < rank; ++i) shape.push_back(static_cast<Index>(r.take(8)));
    const Index n = shape_numel(shape);
    if (n <= 0 || n > (Index(1) << 32)) throw FormatError("tensor '" + name + "' has an invalid shape");
    std::vector<float> values(static_cast<std::size_t>(n));
    for (auto& v : values) {
      const auto bits = static_cast<std::uint32_t>(r.take(4));
      std::memcpy(&v, &bits, sizeof v);
    }
    params.add(name, Tensor<float>(std::move(shape), std::move(values)));
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint payload");
  return params;
}

void save_checkpoint(const std::string& path, const ParamSet<float>& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  const auto bytes = encode_checkpoint(params);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

ParamSet<float> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_checkpoint(buf.str());
}

#define TFGRASP_INSTANTIATE_MODEL(S)                                                                     \
  template ParamSet<S> init_model<S>(const ModelConfig&, std::uint64_t);                                \
  template ModelConfig infer_config(const ParamSet<S>&, Index);                                         \
  template Tensor<S> patch_embed(const Tensor<S>&, const ParamSet<S>&, const ModelConfig&);             \
  template Tensor<S> patch_merge(const Tensor<S>&, const Tensor<S>&, Index, Index);                     \
  template Tensor<S> patch_expand(const Tensor<S>&, const Tensor<S>&, Index, Index);                    \
  template Tensor<S> forward(const Tensor<S>&, const ParamSet<S>&, const ModelConfig&, ForwardTrace<S>*);

TFGRASP_INSTANTIATE_MODEL(float)
TFGRASP_INSTANTIATE_MODEL(double)

}  // namespace tfgrasp
