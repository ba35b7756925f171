#pragma once

// Slow scalar reference implementations. They share no code with the library
// beyond plain containers, so agreement is evidence rather than tautology.

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

namespace oracle {

struct Map {
  int h = 0, w = 0;
  std::vector<double> v;  // row-major

  Map() = default;
  Map(int h_, int w_) : h(h_), w(w_), v(static_cast<std::size_t>(h_ * w_), 0.0) {}
  double& operator()(int y, int x) { return v[static_cast<std::size_t>(y * w + x)]; }
  double operator()(int y, int x) const { return v[static_cast<std::size_t>(y * w + x)]; }
};

inline double total(const Map& m) {
  double s = 0.0;
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) s += m(y, x);
  return s;
}

inline double kld(const Map& m, const Map& g, double eps) {
  const double sm = total(m), sg = total(g);
  double out = 0.0;
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) {
      const double p = m(y, x) / sm, q = g(y, x) / sg;
      out += q * std::log(eps + q / (eps + p));
    }
  return out;
}

inline double sim(const Map& m, const Map& g) {
  const double sm = total(m), sg = total(g);
  double out = 0.0;
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) out += std::min(m(y, x) / sm, g(y, x) / sg);
  return out;
}

inline double nss(const Map& m, const Map& g) {
  const double n = static_cast<double>(m.h * m.w);
  double mean = 0.0;
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) mean += m(y, x);
  mean /= n;
  double var = 0.0;
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) var += (m(y, x) - mean) * (m(y, x) - mean);
  const double sd = std::sqrt(var / n);
  if (sd == 0.0) return 0.0;
  double acc = 0.0, weight = 0.0;
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) {
      acc += (m(y, x) - mean) / sd * g(y, x);
      weight += g(y, x);
    }
  return acc / weight;
}

/// One bilinear sample of `in` at output pixel (oy, ox) of an out_h x out_w
/// grid, half-pixel centres, edges clamped.
inline double bilinear_at(const Map& in, int out_h, int out_w, int oy, int ox) {
  auto coord = [](int o, int in_n, int out_n, int& i0, int& i1, double& f) {
    double s = (o + 0.5) * static_cast<double>(in_n) / static_cast<double>(out_n) - 0.5;
    if (s < 0.0) s = 0.0;
    i0 = static_cast<int>(std::floor(s));
    if (i0 > in_n - 1) i0 = in_n - 1;
    i1 = std::min(i0 + 1, in_n - 1);
    f = s - i0;
  };
  int y0, y1, x0, x1;
  double fy, fx;
  coord(oy, in.h, out_h, y0, y1, fy);
  coord(ox, in.w, out_w, x0, x1, fx);
  return (1 - fy) * ((1 - fx) * in(y0, x0) + fx * in(y0, x1)) + fy * ((1 - fx) * in(y1, x0) + fx * in(y1, x1));
}

inline Map bilinear(const Map& in, int out_h, int out_w) {
  Map out(out_h, out_w);
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) out(y, x) = bilinear_at(in, out_h, out_w, y, x);
  return out;
}

/// Feature tensor indexed [b][c] -> Map.
using Tensor = std::vector<std::vector<Map>>;

/// Coarse-to-fine top-down fusion. `global` is [b][c]; levels[l] may be empty.
inline Tensor fuse(const std::vector<std::vector<double>>& global, const std::vector<std::optional<Tensor>>& levels,
                   const std::vector<std::pair<int, int>>& grids) {
  const std::size_t B = global.size(), C = global[0].size();
  Tensor x(B, std::vector<Map>(C));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      Map m(grids[2].first, grids[2].second);
      for (int y = 0; y < m.h; ++y)
        for (int xx = 0; xx < m.w; ++xx) m(y, xx) = global[b][c];
      x[b][c] = m;
    }
  for (int level = 2; level >= 0; --level) {
    const auto [h, w] = grids[static_cast<std::size_t>(level)];
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c) {
        Map cur = x[b][c];
        if (cur.h != h || cur.w != w) cur = bilinear(cur, h, w);
        if (levels[static_cast<std::size_t>(level)])
          for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) cur(y, xx) += (*levels[static_cast<std::size_t>(level)])[b][c](y, xx);
        x[b][c] = cur;
      }
  }
  return x;
}

/// 3x3, stride 1, replicate padding, no bias. weight[ky][kx][cin][cout].
inline Tensor conv3x3_replicate(const Tensor& in, const std::vector<std::vector<std::vector<std::vector<double>>>>& weight) {
  const std::size_t B = in.size(), Cin = in[0].size(), Cout = weight[0][0][0].size();
  const int h = in[0][0].h, w = in[0][0].w;
  Tensor out(B, std::vector<Map>(Cout, Map(h, w)));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t co = 0; co < Cout; ++co)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          double s = 0.0;
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = std::clamp(y + ky - 1, 0, h - 1), ix = std::clamp(x + kx - 1, 0, w - 1);
              for (std::size_t ci = 0; ci < Cin; ++ci) s += in[b][ci](iy, ix) * weight[ky][kx][ci][co];
            }
          out[b][co](y, x) = s;
        }
  return out;
}

/// Per-pixel dot product of the text vector with every pixel embedding, then
/// bilinear upsampling to out_h x out_w.
inline Map activation(const std::vector<double>& query, const std::vector<Map>& pixels, int out_h, int out_w) {
  Map s(pixels[0].h, pixels[0].w);
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x) {
      double d = 0.0;
      for (std::size_t c = 0; c < query.size(); ++c) d += query[c] * pixels[c](y, x);
      s(y, x) = d;
    }
  return bilinear(s, out_h, out_w);
}

/// Mean binary cross-entropy with logits, written directly from the definition.
inline double bce(const std::vector<double>& z, const std::vector<int>& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-z[i]));
    s += y[i] ? -std::log(p) : -std::log(1.0 - p);
  }
  return s / static_cast<double>(z.size());
}

}  // namespace oracle
