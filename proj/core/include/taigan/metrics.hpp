#pragma once

// Image similarity between a converted (or moved) frame and its reference.
// NMAE and PSNR normalise by the reference only, so they are asymmetric; MSE is
// symmetric. SSIM is the global (whole-volume) statistic, not windowed.

#include <span>
#include <string>
#include <vector>

#include "taigan/volume.hpp"

namespace taigan {

/// mean |pred - ref| / (max(ref) - min(ref)). Throws on a constant reference.
double nmae(std::span<const double> pred, std::span<const double> ref);
double mse_metric(std::span<const double> pred, std::span<const double> ref);
/// Global SSIM with C1 = (0.01 DR)^2, C2 = (0.03 DR)^2 and DR = max(ref) - min(ref)
/// (DR = 1 when the reference is constant).
double ssim(std::span<const double> pred, std::span<const double> ref);
/// Mean of local SSIM over cubic windows of edge `window`. Diagnostics only.
double ssim_windowed(const Volume& pred, const Volume& ref, int window = 7);
/// 10 log10(max(ref)^2 / MSE); +inf when MSE == 0.
double psnr(std::span<const double> pred, std::span<const double> ref);
/// (H(A) + H(B)) / H(A, B) over `bins` equal-width bins spanning the union range.
double nmi(std::span<const double> moving, std::span<const double> reference, int bins = 64);

double nmae(const Volume& pred, const Volume& ref);
double mse_metric(const Volume& pred, const Volume& ref);
double ssim(const Volume& pred, const Volume& ref);
double psnr(const Volume& pred, const Volume& ref);
double nmi(const Volume& moving, const Volume& reference, int bins = 64);

std::vector<double> to_doubles(const Volume& v);

struct SimilarityScores {
  double nmae = 0;
  double mse = 0;
  double ssim = 0;
  double psnr = 0;
};
SimilarityScores similarity(const Volume& pred, const Volume& ref);

}  // namespace taigan
