#pragma once

// Full-reference quality metrics in the [0, 1] domain.

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "pffnet/image_io.hpp"

namespace pffnet {

// PSNR in dB; identical images have no finite PSNR and are marked infinite instead.
struct Psnr {
    double db = 0.0;
    bool infinite = false;

    static Psnr inf() { return {0.0, true}; }
    std::string str() const;
};

// 10 log10(peak^2 / MSE) over all pixels and channels. Throws ShapeError on dim mismatch.
Psnr psnr(const ImageBuffer& a, const ImageBuffer& b, double peak = 1.0);

inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

// Normalized 11-tap Gaussian (sigma 1.5); the 2-D window is its outer product.
const std::vector<double>& ssim_kernel();

// Mean SSIM over every 11x11 window lying fully inside the image, per channel, then
// averaged over channels. Dynamic range 1. Throws ShapeError if min(h, w) < 11.
double ssim(const ImageBuffer& a, const ImageBuffer& b);

struct MetricEntry {
    std::string name;
    Psnr psnr;
    double ssim = 0.0;
};

struct MetricFailure {
    std::size_t index = 0;
    std::string name;
    std::string message;
};

struct MetricReport {
    std::vector<MetricEntry> entries;      // input order
    std::vector<MetricFailure> failures;   // items skipped with the reason
    double mean_psnr = 0.0;                // over finite PSNR entries only
    std::size_t finite_psnr = 0;
    std::size_t infinite_psnr = 0;
    double mean_ssim = 0.0;

    std::string to_tsv() const;
    std::string to_table() const;
};

struct EvalItem {
    std::string name;
    ImageBuffer restored;
    ImageBuffer truth;
};

MetricReport evaluate_pairs(const std::vector<EvalItem>& items);

// Each element is (restored path, truth path); unreadable or mismatched pairs become failures.
MetricReport evaluate_files(const std::vector<std::pair<std::string, std::string>>& paths);

// Two-column tab-separated list of (restored path, truth path); '#' lines ignored.
std::vector<std::pair<std::string, std::string>> read_pair_list(const std::string& path);

}  // namespace pffnet
