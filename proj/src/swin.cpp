#include "tfgrasp/swin.hpp"

#include <cmath>

namespace tfgrasp {
namespace {

void check_tiling(Index height, Index width, Index window) {
  if (window <= 0 || height <= 0 || width <= 0 || height % window != 0 || width % window != 0) {
    throw ShapeError("token map " + std::to_string(height) + "x" + std::to_string(width) +
                     " is not divisible into windows of " + std::to_string(window));
  }
}

// Window-ordered position -> source token, for a map rolled by (shift, shift).
std::vector<Index> window_order(Index height, Index width, Index window, Index shift) {
  check_tiling(height, width, window);
  const Index tiles_w = width / window;
  std::vector<Index> order(static_cast<std::size_t>(height * width));
  for (Index i = 0; i < height; ++i) {
    for (Index j = 0; j < width; ++j) {
      const Index tile = (i / window) * tiles_w + j / window;
      const Index local = (i % window) * window + j % window;
      const Index r = tile * window * window + local;
      const Index src = ((i + shift) % height) * width + (j + shift) % width;
      order[static_cast<std::size_t>(r)] = src;
    }
  }
  return order;
}

// Repeats a per-image row map for `batch` images of `per_image` rows each.
IndexMap batched_rows(const std::vector<Index>& map, Index batch) {
  const auto per_image = static_cast<Index>(map.size());
  auto rows = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(batch * per_image));
  for (Index b = 0; b < batch; ++b) {
    for (Index r = 0; r < per_image; ++r) {
      (*rows)[static_cast<std::size_t>(b * per_image + r)] = b * per_image + map[static_cast<std::size_t>(r)];
    }
  }
  return rows;
}

template <typename Scalar>
Tensor<Scalar> tokens_of(const Tensor<Scalar>& x) {
  if (x.rank() == 3) return x.reshape(Shape{1, x.dim(0), x.dim(1), x.dim(2)});
  if (x.rank() != 4) throw ShapeError("expected a token map [B, H, W, C], got " + shape_string(x.shape()));
  return x;
}

}  // namespace

std::vector<Index> build_relative_position_index(Index window) {
  if (window < 1) throw ShapeError("window size must be positive");
  const Index t = window * window;
  const Index span = 2 * window - 1;
  std::vector<Index> index(static_cast<std::size_t>(t * t));
  for (Index a = 0; a < t; ++a) {
    for (Index b = 0; b < t; ++b) {
      const Index drow = a / window - b / window;
      const Index dcol = a % window - b % window;
      index[static_cast<std::size_t>(a * t + b)] = (drow + window - 1) * span + (dcol + window - 1);
    }
  }
  return index;
}

std::vector<int> build_shift_regions(Index height, Index width, Index window, Index shift) {
  check_tiling(height, width, window);
  if (shift < 0 || shift >= window) throw ShapeError("shift must lie in [0, window)");
  const auto order = window_order(height, width, window, 0);
  std::vector<int> regions(order.size(), 0);
  if (shift == 0) return regions;
  auto segment = [&](Index v, Index extent) { return v < extent - window ? 0 : (v < extent - shift ? 1 : 2); };
  for (std::size_t r = 0; r < order.size(); ++r) {
    const Index i = order[r] / width;
    const Index j = order[r] % width;
    regions[r] = static_cast<int>(3 * segment(i, height) + segment(j, width));
  }
  return regions;
}

WindowLayout make_window_layout(Index height, Index width, Index window, Index shift) {
  WindowLayout layout;
  layout.height = height;
  layout.width = width;
  layout.window = window;
  layout.shift = shift;
  const auto regions = build_shift_regions(height, width, window, shift);
  auto to = window_order(height, width, window, shift);
  std::vector<Index> from(to.size());
  for (std::size_t r = 0; r < to.size(); ++r) from[static_cast<std::size_t>(to[r])] = static_cast<Index>(r);
  layout.to_windows = std::make_shared<const std::vector<Index>>(std::move(to));
  layout.from_windows = std::make_shared<const std::vector<Index>>(std::move(from));
  layout.relative_index = build_relative_position_index(window);
  if (shift > 0) {
    const Index t = window * window;
    const Index windows = layout.num_windows();
    layout.mask.assign(static_cast<std::size_t>(windows * t * t), 0.0);
    for (Index w = 0; w < windows; ++w)
      for (Index a = 0; a < t; ++a)
        for (Index b = 0; b < t; ++b)
          if (regions[static_cast<std::size_t>(w * t + a)] != regions[static_cast<std::size_t>(w * t + b)])
            layout.mask[static_cast<std::size_t>((w * t + a) * t + b)] = kMaskValue;
  }
  return layout;
}

template <typename Scalar>
Tensor<Scalar> build_shift_mask(Index height, Index width, Index window, Index shift) {
  const Index t = window * window;
  const auto layout = make_window_layout(height, width, window, shift);
  const Index windows = layout.num_windows();
  std::vector<Scalar> values(static_cast<std::size_t>(windows * t * t), Scalar(0));
  for (std::size_t i = 0; i < layout.mask.size(); ++i) values[i] = static_cast<Scalar>(layout.mask[i]);
  return Tensor<Scalar>(Shape{windows, t, t}, std::move(values));
}

template <typename Scalar>
Tensor<Scalar> window_partition(const Tensor<Scalar>& x, Index window) {
  const auto maps = tokens_of(x);
  const Index b = maps.dim(0), h = maps.dim(1), w = maps.dim(2), c = maps.dim(3);
  const auto order = window_order(h, w, window, 0);
  auto rows = gather_rows(maps.reshape(Shape{b * h * w, c}), batched_rows(order, b));
  return rows.reshape(Shape{b * (h / window) * (w / window), window * window, c});
}

template <typename Scalar>
Tensor<Scalar> window_reverse(const Tensor<Scalar>& windows, Index height, Index width, Index window) {
  const Index c = windows.dim(-1);
  const Index per_image = height * width;
  if (windows.numel() % (per_image * c) != 0) {
    throw ShapeError("window_reverse: " + shape_string(windows.shape()) + " does not tile a " +
                     std::to_string(height) + "x" + std::to_string(width) + " map");
  }
  const Index b = windows.numel() / (per_image * c);
  const auto order = window_order(height, width, window, 0);
  std::vector<Index> inverse(order.size());
  for (std::size_t r = 0; r < order.size(); ++r) inverse[static_cast<std::size_t>(order[r])] = static_cast<Index>(r);
  auto rows = gather_rows(windows.reshape(Shape{b * per_image, c}), batched_rows(inverse, b));
  return rows.reshape(Shape{b, height, width, c});
}

template <typename Scalar>
Tensor<Scalar> cyclic_shift(const Tensor<Scalar>& x, Index dy, Index dx) {
  const auto maps = tokens_of(x);
  const Index b = maps.dim(0), h = maps.dim(1), w = maps.dim(2), c = maps.dim(3);
  std::vector<Index> order(static_cast<std::size_t>(h * w));
  for (Index i = 0; i < h; ++i)
    for (Index j = 0; j < w; ++j)
      order[static_cast<std::size_t>(i * w + j)] = (((i + dy) % h + h) % h) * w + ((j + dx) % w + w) % w;
  auto rows = gather_rows(maps.reshape(Shape{b * h * w, c}), batched_rows(order, b));
  return rows.reshape(maps.shape());
}

Index swin_block_parameter_count(Index dim, Index heads, Index window) {
  const Index table = (2 * window - 1) * (2 * window - 1);
  const Index hidden = kMlpRatio * dim;
  const Index sub = 2 * dim                      // norm1
                    + 4 * dim * dim + dim        // q, k, v, o + output bias
                    + heads * table              // relative bias
                    + 2 * dim                    // norm2
                    + dim * hidden + hidden      // mlp fc1
                    + hidden * dim + dim;        // mlp fc2
  return 2 * sub;
}

template <typename Scalar>
void register_swin_block(ParamSet<Scalar>& set, const std::string& prefix, Index dim, Index heads,
                         Index window) {
  if (heads <= 0 || dim % heads != 0) {
    throw ConfigError("attention width " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  }
  const Index table = (2 * window - 1) * (2 * window - 1);
  const Index hidden = kMlpRatio * dim;
  for (const char* part : {".wmsa", ".swmsa"}) {
    const std::string p = prefix + part;
    set.ones(p + ".norm1.gamma", {dim});
    set.zeros(p + ".norm1.beta", {dim});
    set.normal(p + ".attn.w_q", {dim, dim});
    set.normal(p + ".attn.w_k", {dim, dim});
    set.normal(p + ".attn.w_v", {dim, dim});
    set.normal(p + ".attn.w_o", {dim, dim});
    set.zeros(p + ".attn.b_o", {dim});
    set.normal(p + ".attn.bias_table", {heads, table});
    set.ones(p + ".norm2.gamma", {dim});
    set.zeros(p + ".norm2.beta", {dim});
    set.normal(p + ".mlp.w1", {dim, hidden});
    set.zeros(p + ".mlp.b1", {hidden});
    set.normal(p + ".mlp.w2", {hidden, dim});
    set.zeros(p + ".mlp.b2", {dim});
  }
}

template <typename Scalar>
SwinBlockParams<Scalar> swin_block_params(const ParamSet<Scalar>& set, const std::string& prefix) {
  auto sub = [&](const std::string& p) {
    SwinSubBlockParams<Scalar> s;
    s.norm1 = {set.at(p + ".norm1.gamma"), set.at(p + ".norm1.beta")};
    s.attn.w_q = set.at(p + ".attn.w_q");
    s.attn.w_k = set.at(p + ".attn.w_k");
    s.attn.w_v = set.at(p + ".attn.w_v");
    s.attn.w_o = set.at(p + ".attn.w_o");
    s.attn.b_o = set.at(p + ".attn.b_o");
    s.attn.bias_table = set.at(p + ".attn.bias_table");
    s.norm2 = {set.at(p + ".norm2.gamma"), set.at(p + ".norm2.beta")};
    s.mlp = {set.at(p + ".mlp.w1"), set.at(p + ".mlp.b1"), set.at(p + ".mlp.w2"), set.at(p + ".mlp.b2")};
    return s;
  };
  return {sub(prefix + ".wmsa"), sub(prefix + ".swmsa")};
}

template <typename Scalar>
Tensor<Scalar> mhsa(const Tensor<Scalar>& x, const AttentionParams<Scalar>& p,
                    const std::vector<Index>& relative_index, const std::vector<double>& mask,
                    Tensor<Scalar>* weights) {
  const Tensor<Scalar> xs = x.rank() == 2 ? x.reshape(Shape{1, x.dim(0), x.dim(1)}) : x;
  if (xs.rank() != 3) throw ShapeError("mhsa expects [N, T, C] tokens, got " + shape_string(x.shape()));
  const Index n = xs.dim(0), t = xs.dim(1), c = xs.dim(2);
  const Index heads = p.heads();
  if (heads <= 0 || c % heads != 0) {
    throw ConfigError("attention width " + std::to_string(c) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  }
  if (static_cast<Index>(relative_index.size()) != t * t) {
    throw ShapeError("relative position index covers " + std::to_string(relative_index.size()) +
                     " pairs, window has " + std::to_string(t * t));
  }
  const Index hd = c / heads;
  const Index table = p.bias_table.dim(1);

  auto split_heads = [&](const Tensor<Scalar>& y) {
    return permute(y.reshape(Shape{n, t, heads, hd}), {0, 2, 1, 3});
  };
  const Tensor<Scalar> none;
  auto q = split_heads(scale(linear(xs, p.w_q, none), Scalar(1) / std::sqrt(Scalar(hd))));
  auto k = split_heads(linear(xs, p.w_k, none));
  auto v = split_heads(linear(xs, p.w_v, none));

  auto logits = matmul_transposed(q, k);  // [N, heads, T, T]
  auto bias_map = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(heads * t * t));
  for (Index h = 0; h < heads; ++h)
    for (Index k2 = 0; k2 < t * t; ++k2) {
      const Index rel = relative_index[static_cast<std::size_t>(k2)];
      if (rel < 0 || rel >= table) throw ShapeError("relative position index exceeds the bias table");
      (*bias_map)[static_cast<std::size_t>(h * t * t + k2)] = h * table + rel;
    }
  logits = add(logits, gather(p.bias_table, std::move(bias_map), Shape{heads, t, t}));

  if (!mask.empty()) {
    const auto windows = static_cast<Index>(mask.size()) / (t * t);
    if (windows * t * t != static_cast<Index>(mask.size()) || n % windows != 0) {
      throw ShapeError("attention mask with " + std::to_string(mask.size()) + " entries does not fit " +
                       std::to_string(n) + " windows of " + std::to_string(t) + " tokens");
    }
    std::vector<Scalar> expanded(static_cast<std::size_t>(windows * heads * t * t));
    for (Index w = 0; w < windows; ++w)
      for (Index h = 0; h < heads; ++h)
        for (Index k2 = 0; k2 < t * t; ++k2)
          expanded[static_cast<std::size_t>((w * heads + h) * t * t + k2)] =
              static_cast<Scalar>(mask[static_cast<std::size_t>(w * t * t + k2)]);
    Tensor<Scalar> m(Shape{windows, heads, t, t}, std::move(expanded));
    logits = add(logits.reshape(Shape{n / windows, windows, heads, t, t}), m).reshape(Shape{n, heads, t, t});
  }

  auto attn = softmax(logits, -1);
  if (weights != nullptr) *weights = attn;
  auto merged = permute(matmul(attn, v), {0, 2, 1, 3}).reshape(Shape{n, t, c});
  auto out = linear(merged, p.w_o, p.b_o);
  return out.reshape(x.shape());
}

template <typename Scalar>
Tensor<Scalar> window_attention(const Tensor<Scalar>& x, const AttentionParams<Scalar>& p, const WindowLayout& layout,
                                Tensor<Scalar>* weights) {
  const Index c = x.dim(-1);
  const Index per_image = layout.height * layout.width;
  if (x.numel() % (per_image * c) != 0) {
    throw ShapeError("window attention: tokens " + shape_string(x.shape()) + " do not form " +
                     std::to_string(layout.height) + "x" + std::to_string(layout.width) + " maps");
  }
  const Index batch = x.numel() / (per_image * c);
  auto h = gather_rows(x.reshape(Shape{batch * per_image, c}), batched_rows(*layout.to_windows, batch));
  h = mhsa(h.reshape(Shape{batch * layout.num_windows(), layout.tokens(), c}), p, layout.relative_index, layout.mask,
           weights);
  h = gather_rows(h.reshape(Shape{batch * per_image, c}), batched_rows(*layout.from_windows, batch));
  return h.reshape(x.shape());
}

template <typename Scalar>
Tensor<Scalar> swin_sub_block(const Tensor<Scalar>& x, const SwinSubBlockParams<Scalar>& p,
                              const WindowLayout& layout) {
  const Index c = x.dim(-1);
  const Index per_image = layout.height * layout.width;
  if (x.numel() % (per_image * c) != 0) {
    throw ShapeError("swin block: tokens " + shape_string(x.shape()) + " do not form " +
                     std::to_string(layout.height) + "x" + std::to_string(layout.width) + " maps");
  }
  const auto flat = x.reshape(Shape{x.numel() / c, c});

  auto y = add(flat, window_attention(layer_norm(flat, p.norm1.gamma, p.norm1.beta), p.attn, layout));

  auto m = layer_norm(y, p.norm2.gamma, p.norm2.beta);
  m = linear(gelu(linear(m, p.mlp.w1, p.mlp.b1)), p.mlp.w2, p.mlp.b2);
  return add(y, m).reshape(x.shape());
}

template <typename Scalar>
Tensor<Scalar> swin_block(const Tensor<Scalar>& x, const SwinBlockParams<Scalar>& p, const WindowLayout& local,
                          const WindowLayout& shifted) {
  return swin_sub_block(swin_sub_block(x, p.local, local), p.shifted, shifted);
}

#define TFGRASP_INSTANTIATE_SWIN(S)                                                                            \
  template Tensor<S> build_shift_mask<S>(Index, Index, Index, Index);                                         \
  template Tensor<S> window_partition(const Tensor<S>&, Index);                                               \
  template Tensor<S> window_reverse(const Tensor<S>&, Index, Index, Index);                                   \
  template Tensor<S> cyclic_shift(const Tensor<S>&, Index, Index);                                            \
  template void register_swin_block(ParamSet<S>&, const std::string&, Index, Index, Index);                   \
  template SwinBlockParams<S> swin_block_params(const ParamSet<S>&, const std::string&);                      \
  template Tensor<S> mhsa(const Tensor<S>&, const AttentionParams<S>&, const std::vector<Index>&,             \
                          const std::vector<double>&, Tensor<S>*);                                            \
  template Tensor<S> window_attention(const Tensor<S>&, const AttentionParams<S>&, const WindowLayout&,           \
                                      Tensor<S>*);                                                            \
  template Tensor<S> swin_sub_block(const Tensor<S>&, const SwinSubBlockParams<S>&, const WindowLayout&);     \
  template Tensor<S> swin_block(const Tensor<S>&, const SwinBlockParams<S>&, const WindowLayout&,             \
                                const WindowLayout&);

TFGRASP_INSTANTIATE_SWIN(float)
TFGRASP_INSTANTIATE_SWIN(double)

}  // namespace tfgrasp
