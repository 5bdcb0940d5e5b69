#include "pffnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "pffnet/error.hpp"
#include "pffnet/keyvalue.hpp"

namespace pffnet {
namespace {

void require_same_dims(const ImageBuffer& a, const ImageBuffer& b, const char* op) {
    if (!a.same_dims(b)) {
        throw ShapeError(std::string(op) + ": image dims differ (" + std::to_string(a.height) + "x" +
                         std::to_string(a.width) + "x" + std::to_string(a.channels) + " vs " +
                         std::to_string(b.height) + "x" + std::to_string(b.width) + "x" +
                         std::to_string(b.channels) + ")");
    }
}

// Gaussian-weighted sums over all valid windows of one channel, separably: rows first.
class WindowFilter {
public:
    WindowFilter(std::size_t h, std::size_t w) : h_(h), w_(w), oh_(h - kSsimWindow + 1), ow_(w - kSsimWindow + 1) {}

    std::vector<double> apply(const std::vector<double>& plane) const {
        const auto& g = ssim_kernel();
        std::vector<double> rows(h_ * ow_);
        for (std::size_t y = 0; y < h_; ++y)
            for (std::size_t x = 0; x < ow_; ++x) {
                double acc = 0.0;
                for (std::size_t k = 0; k < kSsimWindow; ++k) acc += g[k] * plane[y * w_ + x + k];
                rows[y * ow_ + x] = acc;
            }
        std::vector<double> out(oh_ * ow_);
        for (std::size_t y = 0; y < oh_; ++y)
            for (std::size_t x = 0; x < ow_; ++x) {
                double acc = 0.0;
                for (std::size_t k = 0; k < kSsimWindow; ++k) acc += g[k] * rows[(y + k) * ow_ + x];
                out[y * ow_ + x] = acc;
            }
        return out;
    }

private:
    std::size_t h_, w_, oh_, ow_;
};

}  // namespace

std::string Psnr::str() const {
    if (infinite) return "inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", db);
    return buf;
}

Psnr psnr(const ImageBuffer& a, const ImageBuffer& b, double peak) {
    require_same_dims(a, b, "psnr");
    if (a.pixels.empty()) throw ShapeError("psnr: empty images");
    double sse = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]);
        sse += d * d;
    }
    if (sse == 0.0) return Psnr::inf();
    const double mse = sse / static_cast<double>(a.pixels.size());
    return {10.0 * std::log10(peak * peak / mse), false};
}

const std::vector<double>& ssim_kernel() {
    static const std::vector<double> kernel = [] {
        std::vector<double> g(kSsimWindow);
        const double center = static_cast<double>(kSsimWindow / 2);
        double sum = 0.0;
        for (std::size_t i = 0; i < kSsimWindow; ++i) {
            const double d = static_cast<double>(i) - center;
            g[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
            sum += g[i];
        }
        for (double& v : g) v /= sum;
        return g;
    }();
    return kernel;
}

double ssim(const ImageBuffer& a, const ImageBuffer& b) {
    require_same_dims(a, b, "ssim");
    if (a.height < kSsimWindow || a.width < kSsimWindow) {
        throw ShapeError("ssim: image " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                         " is smaller than the 11x11 window");
    }
    constexpr double c1 = (kSsimK1 * 1.0) * (kSsimK1 * 1.0);
    constexpr double c2 = (kSsimK2 * 1.0) * (kSsimK2 * 1.0);
    const std::size_t h = a.height, w = a.width, n = h * w;
    const WindowFilter filter(h, w);

    double total = 0.0;
    for (std::size_t c = 0; c < a.channels; ++c) {
        std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = a.pixels[i * a.channels + c];
            y[i] = b.pixels[i * b.channels + c];
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mx = filter.apply(x), my = filter.apply(y);
        const auto sxx = filter.apply(xx), syy = filter.apply(yy), sxy = filter.apply(xy);
        double sum = 0.0;
        for (std::size_t i = 0; i < mx.size(); ++i) {
            const double vx = sxx[i] - mx[i] * mx[i];
            const double vy = syy[i] - my[i] * my[i];
            const double cov = sxy[i] - mx[i] * my[i];
            sum += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
                   ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
        }
        total += sum / static_cast<double>(mx.size());
    }
    return total / static_cast<double>(a.channels);
}

MetricReport evaluate_pairs(const std::vector<EvalItem>& items) {
    MetricReport report;
    double psnr_sum = 0.0, ssim_sum = 0.0;
    for (std::size_t i = 0; i < items.size(); ++i) {
        const EvalItem& it = items[i];
        try {
            MetricEntry e{it.name, psnr(it.restored, it.truth), ssim(it.restored, it.truth)};
            if (e.psnr.infinite) {
                ++report.infinite_psnr;
            } else {
                ++report.finite_psnr;
                psnr_sum += e.psnr.db;
            }
            ssim_sum += e.ssim;
            report.entries.push_back(std::move(e));
        } catch (const Error& err) {
            report.failures.push_back({i, it.name, err.what()});
        }
    }
    if (report.finite_psnr > 0) report.mean_psnr = psnr_sum / static_cast<double>(report.finite_psnr);
    if (!report.entries.empty()) report.mean_ssim = ssim_sum / static_cast<double>(report.entries.size());
    return report;
}

MetricReport evaluate_files(const std::vector<std::pair<std::string, std::string>>& paths) {
    std::vector<EvalItem> items;
    std::vector<MetricFailure> load_failures;
    std::vector<std::size_t> original_index;
    for (std::size_t i = 0; i < paths.size(); ++i) {
        try {
            items.push_back({paths[i].first, load_image(paths[i].first), load_image(paths[i].second)});
            original_index.push_back(i);
        } catch (const Error& err) {
            load_failures.push_back({i, paths[i].first, err.what()});
        }
    }
    MetricReport report = evaluate_pairs(items);
    for (auto& f : report.failures) f.index = original_index[f.index];
    report.failures.insert(report.failures.end(), load_failures.begin(), load_failures.end());
    std::sort(report.failures.begin(), report.failures.end(),
              [](const MetricFailure& a, const MetricFailure& b) { return a.index < b.index; });
    return report;
}

std::vector<std::pair<std::string, std::string>> read_pair_list(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path, "cannot open for reading");
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty() || line[0] == '#') continue;
        const auto fields = split(line, '\t');
        if (fields.size() < 2) {
            throw FormatError(path, "line " + std::to_string(line_no) + ": expected restored<TAB>truth");
        }
        out.emplace_back(fields[0], fields[1]);
    }
    return out;
}

std::string MetricReport::to_tsv() const {
    std::string out = "# ssim: mean of per-channel 11x11 gaussian SSIM (sigma 1.5, K1 0.01, K2 0.03), range [0,1]\n";
    out += "name\tpsnr_db\tssim\n";
    char buf[64];
    for (const auto& e : entries) {
        std::snprintf(buf, sizeof buf, "%.6f", e.ssim);
        out += e.name + "\t" + e.psnr.str() + "\t" + buf + "\n";
    }
    std::snprintf(buf, sizeof buf, "%.4f\t%.6f", mean_psnr, mean_ssim);
    out += std::string("mean\t") + buf + "\n";
    return out;
}

std::string MetricReport::to_table() const {
    std::size_t width = 4;
    for (const auto& e : entries) width = std::max(width, e.name.size());
    char buf[512];
    std::string out;
    std::snprintf(buf, sizeof buf, "%-*s  %10s  %8s\n", static_cast<int>(width), "image", "PSNR (dB)", "SSIM");
    out += buf;
    out += std::string(width + 22, '-') + "\n";
    for (const auto& e : entries) {
        std::snprintf(buf, sizeof buf, "%-*s  %10s  %8.4f\n", static_cast<int>(width), e.name.c_str(),
                      e.psnr.str().c_str(), e.ssim);
        out += buf;
    }
    out += std::string(width + 22, '-') + "\n";
    std::snprintf(buf, sizeof buf, "%-*s  %10.4f  %8.4f\n", static_cast<int>(width), "mean", mean_psnr, mean_ssim);
    out += buf;
    std::snprintf(buf, sizeof buf, "%zu images, %zu with infinite PSNR (excluded from mean), %zu failed\n",
                  entries.size(), infinite_psnr, failures.size());
    out += buf;
    out += "SSIM: per-channel mean, 11x11 gaussian window, sigma 1.5\n";
    return out;
}

}  // namespace pffnet
