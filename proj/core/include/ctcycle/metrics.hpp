#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "ctcycle/volume.hpp"

namespace ctcycle {

/// Mean absolute error; symmetric, zero for identical inputs.
double mae(std::span<const float> a, std::span<const float> b);

/// Root mean square error; always >= MAE.
double rmse(std::span<const float> a, std::span<const float> b);

struct SsimParams {
  std::int64_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  /// Data range L. Preprocessed values span roughly one soft-tissue unit, so
  /// 1.0 is the default.
  double dynamic_range = 1.0;
};

/// Mean local SSIM over Gaussian-weighted windows at every valid position
/// (standard formulation). Throws when the image is smaller than the window.
double ssim(std::span<const float> a, std::span<const float> b, std::int64_t height,
            std::int64_t width, const SsimParams& params = {});

struct SliceMetrics {
  std::int64_t slice = 0;
  double mae = 0, rmse = 0, ssim = 0;
};

struct TranslationReport {
  std::vector<SliceMetrics> slices;
  double mean_mae = 0, mean_rmse = 0, mean_ssim = 0;
};

/// Translates each source slice (pass nullptr for the identity, i.e. the
/// no-transfer baseline) and compares it index-wise against the target scan.
/// Per-volume numbers are the means of the per-slice metrics.
TranslationReport evaluate_translation(const SliceTranslator* translator, const Volume& source,
                                       const Volume& target, const SsimParams& params = {});

/// Line-delimited records "slice_index, mae, rmse, ssim" followed by one
/// summary row "summary, <mean mae>, <mean rmse>, <mean ssim>".
void write_report(const TranslationReport& report, std::ostream& out);
void save_report(const TranslationReport& report, const std::filesystem::path& path);

}  // namespace ctcycle
