#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "voxelbridge/embedders.hpp"
#include "voxelbridge/error.hpp"
#include "voxelbridge/image.hpp"

namespace voxelbridge {

// ---- image metrics ----------------------------------------------------------

/// Pearson correlation. A zero-variance input yields 0 and sets `degenerate`.
inline double pearson(std::span<const double> a, std::span<const double> b, bool* degenerate = nullptr) {
  require(a.size() == b.size() && !a.empty(), ErrorKind::shape, "correlation needs equal, nonempty inputs");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (degenerate) *degenerate = saa <= 0.0 || sbb <= 0.0;
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

/// Protocol resize applied to both images before scoring.
inline Image protocol_resize(const Image& img, int resolution) {
  require(resolution > 0, ErrorKind::invalid_argument, "resolution must be positive");
  return resize_bilinear(img, resolution, resolution);
}

/// Pixel correlation over the flattened RGB values of two same-size images.
inline double pixcorr(const Image& a, const Image& b, bool* degenerate = nullptr) {
  require(a.width == b.width && a.height == b.height && !a.empty(), ErrorKind::shape,
          "pixcorr needs two same-size images");
  std::vector<double> x(a.rgb.begin(), a.rgb.end()), y(b.rgb.begin(), b.rgb.end());
  return pearson(x, y, degenerate);
}

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
};

inline std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(static_cast<std::size_t>(size));
  const double c = 0.5 * (size - 1);
  for (int i = 0; i < size; ++i) w[i] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
  const double s = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& x : w) x /= s;
  return w;
}

/// Mean SSIM over all fully contained Gaussian windows (population moments).
inline double ssim(const GrayImage& a, const GrayImage& b, const SsimParams& p = {}) {
  require(a.width == b.width && a.height == b.height, ErrorKind::shape, "ssim needs two same-size images");
  require(a.width >= p.window && a.height >= p.window, ErrorKind::invalid_argument,
          "image smaller than the " + std::to_string(p.window) + "x" + std::to_string(p.window) + " ssim window");
  const auto g = gaussian_window(p.window, p.sigma);
  const int W = a.width, H = a.height, ow = W - p.window + 1, oh = H - p.window + 1;
  // Separable filtering: rows first into (oh x W) buffers, then columns.
  auto filter = [&](auto&& f) {
    std::vector<double> rows(static_cast<std::size_t>(oh) * W, 0.0);
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < W; ++x) {
        double s = 0.0;
        for (int k = 0; k < p.window; ++k) s += g[k] * f(x, y + k);
        rows[static_cast<std::size_t>(y) * W + x] = s;
      }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow, 0.0);
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double s = 0.0;
        for (int k = 0; k < p.window; ++k) s += g[k] * rows[static_cast<std::size_t>(y) * W + x + k];
        out[static_cast<std::size_t>(y) * ow + x] = s;
      }
    return out;
  };
  const auto mx = filter([&](int x, int y) { return a.at(x, y); });
  const auto my = filter([&](int x, int y) { return b.at(x, y); });
  const auto mxx = filter([&](int x, int y) { return a.at(x, y) * a.at(x, y); });
  const auto myy = filter([&](int x, int y) { return b.at(x, y) * b.at(x, y); });
  const auto mxy = filter([&](int x, int y) { return a.at(x, y) * b.at(x, y); });
  const double c1 = (p.k1 * p.data_range) * (p.k1 * p.data_range);
  const double c2 = (p.k2 * p.data_range) * (p.k2 * p.data_range);
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = mxx[i] - mx[i] * mx[i], vy = myy[i] - my[i] * my[i], cxy = mxy[i] - mx[i] * my[i];
    total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

inline double ssim(const Image& a, const Image& b, const SsimParams& p = {}) { return ssim(to_gray(a), to_gray(b), p); }

// ---- identification -----------------------------------------------------------

struct IdentificationResult {
  double percent = 0.0;
  std::vector<double> per_item;  // percent correct per item over its n-1 distractors
};

namespace detail {
inline std::vector<double> standardized(const std::vector<float>& v) {
  std::vector<double> d(v.begin(), v.end());
  const double m = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
  double ss = 0.0;
  for (auto& x : d) {
    x -= m;
    ss += x * x;
  }
  const double s = ss > 0.0 ? 1.0 / std::sqrt(ss) : 0.0;
  for (auto& x : d) x *= s;
  return d;
}
}  // namespace detail

/// Item i wins against distractor j when corr(truth_i, recon_i) > corr(truth_i, recon_j);
/// ties count one half. Returns the mean of per-item percentages.
inline IdentificationResult two_way_identification(const std::vector<std::vector<float>>& truth,
                                                   const std::vector<std::vector<float>>& recon) {
  const std::size_t n = truth.size();
  require(n == recon.size(), ErrorKind::shape, "truth and recon lists differ in length");
  require(n >= 2, ErrorKind::invalid_argument, "identification needs at least two items");
  std::vector<std::vector<double>> t, r;
  for (std::size_t i = 0; i < n; ++i) {
    require(truth[i].size() == truth[0].size() && recon[i].size() == truth[0].size() && !truth[0].empty(),
            ErrorKind::shape, "embeddings must share one nonzero length");
    t.push_back(detail::standardized(truth[i]));
    r.push_back(detail::standardized(recon[i]));
  }
  auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
    return s;
  };
  IdentificationResult out;
  out.per_item.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double own = dot(t[i], r[i]);
    double score = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double other = dot(t[i], r[j]);
      score += own > other ? 1.0 : own == other ? 0.5 : 0.0;
    }
    out.per_item[i] = 100.0 * score / static_cast<double>(n - 1);
  }
  out.percent = std::accumulate(out.per_item.begin(), out.per_item.end(), 0.0) / static_cast<double>(n);
  return out;
}

inline IdentificationResult two_way_identification(const EmbedderSpec& emb, const std::vector<Image>& recon,
                                                   const std::vector<Image>& truth) {
  std::vector<std::vector<float>> t, r;
  for (const auto& img : truth) t.push_back(embed_image(emb, img));
  for (const auto& img : recon) r.push_back(embed_image(emb, img));
  return two_way_identification(t, r);
}

// ---- text metrics -----------------------------------------------------------

/// Lowercased runs of ASCII letters and digits; everything else separates.
inline std::vector<std::string> text_tokens(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

namespace detail {
inline std::map<std::vector<std::string>, int> ngram_counts(const std::vector<std::string>& toks, std::size_t n) {
  std::map<std::vector<std::string>, int> c;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) ++c[{toks.begin() + i, toks.begin() + i + n}];
  return c;
}
}  // namespace detail

/// Cumulative BLEU-1..max_n: geometric mean of clipped n-gram precisions times
/// the brevity penalty against the closest reference length (shorter on ties).
inline std::vector<double> bleu(std::string_view candidate, const std::vector<std::string>& references, int max_n = 4) {
  require(max_n >= 1, ErrorKind::invalid_argument, "max_n must be positive");
  require(!references.empty(), ErrorKind::invalid_argument, "bleu needs at least one reference");
  std::vector<double> out(static_cast<std::size_t>(max_n), 0.0);
  const auto cand = text_tokens(candidate);
  if (cand.empty()) return out;
  std::vector<std::vector<std::string>> refs;
  for (const auto& r : references) refs.push_back(text_tokens(r));

  const auto c = static_cast<double>(cand.size());
  double best_len = -1.0;
  for (const auto& r : refs) {
    const auto len = static_cast<double>(r.size());
    if (best_len < 0.0 || std::abs(len - c) < std::abs(best_len - c) ||
        (std::abs(len - c) == std::abs(best_len - c) && len < best_len))
      best_len = len;
  }
  const double bp = c > best_len ? 1.0 : std::exp(1.0 - best_len / c);

  double log_sum = 0.0;
  bool zero = false;
  for (int n = 1; n <= max_n; ++n) {
    const auto cc = detail::ngram_counts(cand, static_cast<std::size_t>(n));
    std::map<std::vector<std::string>, int> max_ref;
    for (const auto& r : refs)
      for (const auto& [g, k] : detail::ngram_counts(r, static_cast<std::size_t>(n))) max_ref[g] = std::max(max_ref[g], k);
    int clipped = 0, total = 0;
    for (const auto& [g, k] : cc) {
      total += k;
      const auto it = max_ref.find(g);
      if (it != max_ref.end()) clipped += std::min(k, it->second);
    }
    if (clipped == 0 || total == 0) zero = true;
    if (!zero) log_sum += std::log(static_cast<double>(clipped) / total);
    out[static_cast<std::size_t>(n - 1)] = zero ? 0.0 : bp * std::exp(log_sum / n);
  }
  return out;
}

inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// LCS F-measure with beta = 1.2: F = (1 + b^2) P R / (R + b^2 P).
inline double rouge_l(std::string_view candidate, std::string_view reference, double beta = 1.2) {
  const auto c = text_tokens(candidate), r = text_tokens(reference);
  if (c.empty() || r.empty()) return 0.0;
  const double l = static_cast<double>(lcs_length(c, r));
  if (l == 0.0) return 0.0;
  const double p = l / c.size(), rec = l / r.size(), b2 = beta * beta;
  return (1.0 + b2) * p * rec / (rec + b2 * p);
}

// ---- report -------------------------------------------------------------------

struct MetricsReport {
  nlohmann::ordered_json protocol = nlohmann::ordered_json::object();
  std::vector<std::string> items;
  std::map<std::string, std::vector<double>> per_sample;
  std::vector<std::string> flags;

  void add(const std::string& metric, std::vector<double> values) { per_sample[metric] = std::move(values); }

  double aggregate(const std::string& metric) const {
    const auto& v = per_sample.at(metric);
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["protocol"] = protocol;
    nlohmann::ordered_json agg = nlohmann::ordered_json::object();
    for (const auto& [k, v] : per_sample) agg[k] = aggregate(k);
    j["aggregate"] = agg;
    nlohmann::ordered_json per = nlohmann::ordered_json::object();
    for (const auto& [k, v] : per_sample) per[k] = v;
    j["items"] = items;
    j["per_sample"] = per;
    j["flags"] = flags;
    return j;
  }
};

struct ImageEvalOptions {
  int resolution = 425;
  std::vector<std::string> metrics{"pixcorr", "ssim", "twoway"};
  EmbedderSpec embedder;  // image embedding used by twoway
};

/// Scores reconstructions against ground truth item by item. Both images are
/// resized to resolution x resolution first.
inline MetricsReport evaluate_images(const std::vector<std::string>& ids, const std::vector<Image>& recon,
                                     const std::vector<Image>& truth, const ImageEvalOptions& o) {
  require(recon.size() == truth.size() && ids.size() == truth.size(), ErrorKind::shape,
          "recon and truth lists differ in length");
  require(!truth.empty(), ErrorKind::invalid_argument, "nothing to evaluate");
  for (const auto& m : o.metrics)
    require(m == "pixcorr" || m == "ssim" || m == "twoway", ErrorKind::usage, "unknown metric: " + m);
  const SsimParams sp;
  MetricsReport rep;
  rep.protocol = {{"resolution", o.resolution},
                  {"resize", "bilinear, pixel centres aligned"},
                  {"metrics", o.metrics},
                  {"items", ids.size()}};
  rep.items = ids;
  auto wants = [&](std::string_view m) { return std::find(o.metrics.begin(), o.metrics.end(), m) != o.metrics.end(); };
  if (wants("pixcorr")) rep.protocol["pixcorr"] = "Pearson r over flattened RGB values";
  if (wants("ssim"))
    rep.protocol["ssim"] = {{"channel", "luma"}, {"window", sp.window}, {"sigma", sp.sigma}, {"k1", sp.k1},
                            {"k2", sp.k2}, {"data_range", sp.data_range}, {"windows", "valid"},
                            {"moments", "population"}};
  if (wants("twoway"))
    rep.protocol["twoway"] = {{"embedder", to_string(o.embedder.kind)}, {"dim", o.embedder.dim},
                              {"seed", o.embedder.seed}, {"external", o.embedder.external()},
                              {"ties", 0.5}};
  std::vector<double> pc, ss;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto a = protocol_resize(recon[i], o.resolution), b = protocol_resize(truth[i], o.resolution);
    if (wants("pixcorr")) {
      bool degenerate = false;
      pc.push_back(pixcorr(a, b, &degenerate));
      if (degenerate) rep.flags.push_back(ids[i] + ": constant image, pixcorr set to 0");
    }
    if (wants("ssim")) ss.push_back(ssim(a, b, sp));
  }
  if (wants("pixcorr")) rep.add("pixcorr", pc);
  if (wants("ssim")) rep.add("ssim", ss);
  if (wants("twoway")) {
    require(truth.size() >= 2, ErrorKind::invalid_argument, "two-way identification needs at least two items");
    rep.add("twoway", two_way_identification(o.embedder, recon, truth).per_item);
  }
  return rep;
}

}  // namespace voxelbridge
