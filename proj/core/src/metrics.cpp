#include "ctcycle/metrics.hpp"

#include <cmath>
#include <fstream>
#include <ostream>
#include <string>

namespace ctcycle {

namespace {

void check_sizes(std::span<const float> a, std::span<const float> b, const char* op) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(op) + ": size mismatch, " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  if (a.empty()) throw ShapeError(std::string(op) + ": empty input");
}

}  // namespace

double mae(std::span<const float> a, std::span<const float> b) {
  check_sizes(a, b, "mae");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    acc += std::fabs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
  }
  return acc / static_cast<double>(a.size());
}

double rmse(std::span<const float> a, std::span<const float> b) {
  check_sizes(a, b, "rmse");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(a.size()));
}

double ssim(std::span<const float> a, std::span<const float> b, std::int64_t height,
            std::int64_t width, const SsimParams& params) {
  check_sizes(a, b, "ssim");
  if (static_cast<std::int64_t>(a.size()) != height * width) {
    throw ShapeError("ssim: span size does not match extents");
  }
  const std::int64_t win = params.window;
  if (win < 1 || win % 2 == 0) throw ValidationError("ssim: window must be odd and positive");
  if (height < win || width < win) {
    throw ValidationError("ssim: image " + std::to_string(height) + "x" + std::to_string(width) +
                          " is smaller than the " + std::to_string(win) + "-pixel window");
  }

  // Normalized Gaussian window.
  std::vector<double> kernel(static_cast<std::size_t>(win * win));
  {
    const double half = static_cast<double>(win - 1) / 2.0;
    double sum = 0.0;
    for (std::int64_t y = 0; y < win; ++y) {
      for (std::int64_t x = 0; x < win; ++x) {
        const double dy = static_cast<double>(y) - half;
        const double dx = static_cast<double>(x) - half;
        const double v = std::exp(-(dy * dy + dx * dx) / (2.0 * params.sigma * params.sigma));
        kernel[static_cast<std::size_t>(y * win + x)] = v;
        sum += v;
      }
    }
    for (auto& v : kernel) v /= sum;
  }

  const double c1 = (params.k1 * params.dynamic_range) * (params.k1 * params.dynamic_range);
  const double c2 = (params.k2 * params.dynamic_range) * (params.k2 * params.dynamic_range);

  double total = 0.0;
  std::int64_t count = 0;
  for (std::int64_t oy = 0; oy + win <= height; ++oy) {
    for (std::int64_t ox = 0; ox + win <= width; ++ox) {
      double mu_a = 0.0, mu_b = 0.0, aa = 0.0, bb = 0.0, ab = 0.0;
      for (std::int64_t y = 0; y < win; ++y) {
        const float* ra = a.data() + (oy + y) * width + ox;
        const float* rb = b.data() + (oy + y) * width + ox;
        const double* kr = kernel.data() + y * win;
        for (std::int64_t x = 0; x < win; ++x) {
          const double va = static_cast<double>(ra[x]);
          const double vb = static_cast<double>(rb[x]);
          const double k = kr[x];
          mu_a += k * va;
          mu_b += k * vb;
          aa += k * va * va;
          bb += k * vb * vb;
          ab += k * va * vb;
        }
      }
      const double var_a = aa - mu_a * mu_a;
      const double var_b = bb - mu_b * mu_b;
      const double cov = ab - mu_a * mu_b;
      const double numerator = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
      const double denominator = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
      total += numerator / denominator;
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

TranslationReport evaluate_translation(const SliceTranslator* translator, const Volume& source,
                                       const Volume& target, const SsimParams& params) {
  if (source.depth != target.depth) {
    throw ShapeError("evaluate_translation: slice counts differ, " + std::to_string(source.depth) +
                     " vs " + std::to_string(target.depth));
  }
  if (source.height != target.height || source.width != target.width) {
    throw ShapeError("evaluate_translation: slice extents differ");
  }
  TranslationReport report;
  std::vector<float> translated(static_cast<std::size_t>(source.slice_size()));
  for (std::int64_t z = 0; z < source.depth; ++z) {
    const auto src = source.slice(z);
    std::span<const float> compared = src;
    if (translator != nullptr) {
      (*translator)(src, translated, source.height, source.width);
      compared = translated;
    }
    SliceMetrics m;
    m.slice = z;
    m.mae = mae(compared, target.slice(z));
    m.rmse = rmse(compared, target.slice(z));
    m.ssim = ssim(compared, target.slice(z), source.height, source.width, params);
    report.mean_mae += m.mae;
    report.mean_rmse += m.rmse;
    report.mean_ssim += m.ssim;
    report.slices.push_back(m);
  }
  const double inv = 1.0 / static_cast<double>(source.depth);
  report.mean_mae *= inv;
  report.mean_rmse *= inv;
  report.mean_ssim *= inv;
  return report;
}

void write_report(const TranslationReport& report, std::ostream& out) {
  out.precision(9);
  for (const auto& m : report.slices) {
    out << m.slice << ", " << m.mae << ", " << m.rmse << ", " << m.ssim << "\n";
  }
  out << "summary, " << report.mean_mae << ", " << report.mean_rmse << ", " << report.mean_ssim
      << "\n";
}

void save_report(const TranslationReport& report, const std::filesystem::path& path) {
  std::ofstream file(path, std::ios::trunc);
  if (!file) throw FormatError("cannot open " + path.string() + " for writing");
  write_report(report, file);
}

}  // namespace ctcycle
