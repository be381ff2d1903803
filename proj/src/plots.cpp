#include "dldl/plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

namespace dldl {

namespace {

constexpr int kWidth = 640;
constexpr int kHeight = 400;
constexpr int kMarginLeft = 60;
constexpr int kMarginBottom = 40;
constexpr int kMarginTop = 20;
constexpr int kMarginRight = 20;

const char* kSeriesColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                               "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

struct Series {
    std::string name;
    std::vector<double> values;  // x = 1..n
};

void write_svg_curves(const std::string& path, const std::string& title, const std::string& y_label,
                      const std::vector<Series>& series, bool log_scale = false) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    std::size_t n = 0;
    for (const auto& s : series) {
        n = std::max(n, s.values.size());
        for (double v : s.values) {
            double y = log_scale ? std::log10(std::max(v, 1e-12)) : v;
            lo = std::min(lo, y);
            hi = std::max(hi, y);
        }
    }
    if (n == 0) throw DataError("plot: no data points for " + path);
    if (hi <= lo) hi = lo + 1.0;
    double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;

    const double plot_w = kWidth - kMarginLeft - kMarginRight;
    const double plot_h = kHeight - kMarginTop - kMarginBottom;
    auto sx = [&](double i) { return kMarginLeft + (n == 1 ? 0.5 : i / double(n - 1)) * plot_w; };
    auto sy = [&](double v) {
        double y = log_scale ? std::log10(std::max(v, 1e-12)) : v;
        return kMarginTop + (1.0 - (y - lo) / (hi - lo)) * plot_h;
    };

    std::ofstream out(path);
    if (!out) throw DataError("cannot write plot '" + path + "'");
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << kWidth << "' height='" << kHeight << "'>\n";
    out << "<rect width='100%' height='100%' fill='white'/>\n";
    out << "<text x='" << kWidth / 2 << "' y='14' text-anchor='middle' font-size='14'>" << title
        << "</text>\n";
    // axes
    out << "<line x1='" << kMarginLeft << "' y1='" << kMarginTop << "' x2='" << kMarginLeft << "' y2='"
        << kHeight - kMarginBottom << "' stroke='black'/>\n";
    out << "<line x1='" << kMarginLeft << "' y1='" << kHeight - kMarginBottom << "' x2='"
        << kWidth - kMarginRight << "' y2='" << kHeight - kMarginBottom << "' stroke='black'/>\n";
    out << "<text x='" << kWidth / 2 << "' y='" << kHeight - 8 << "' text-anchor='middle' font-size='12'>epoch"
        << "</text>\n";
    out << "<text x='14' y='" << kHeight / 2
        << "' text-anchor='middle' font-size='12' transform='rotate(-90 14 " << kHeight / 2 << ")'>"
        << y_label << (log_scale ? " (log10)" : "") << "</text>\n";
    char buf[64];
    for (int t = 0; t <= 4; ++t) {
        double yv = lo + (hi - lo) * t / 4.0;
        double ypix = kMarginTop + (1.0 - t / 4.0) * plot_h;
        std::snprintf(buf, sizeof(buf), "%.3g", yv);
        out << "<text x='" << kMarginLeft - 6 << "' y='" << ypix + 4
            << "' text-anchor='end' font-size='10'>" << buf << "</text>\n";
    }

    int color = 0;
    double legend_y = kMarginTop + 10;
    for (const auto& s : series) {
        const char* c = kSeriesColors[color % 8];
        out << "<polyline fill='none' stroke='" << c << "' stroke-width='1.5' points='";
        for (std::size_t i = 0; i < s.values.size(); ++i)
            out << sx(double(i)) << ',' << sy(s.values[i]) << ' ';
        out << "'/>\n";
        out << "<circle cx='" << kWidth - kMarginRight - 120 << "' cy='" << legend_y << "' r='4' fill='" << c
            << "'/>\n";
        out << "<text x='" << kWidth - kMarginRight - 110 << "' y='" << legend_y + 4 << "' font-size='11'>"
            << s.name << "</text>\n";
        legend_y += 16;
        ++color;
    }
    out << "</svg>\n";
}

void write_svg_histogram(const std::string& path, const std::string& title,
                         const std::vector<std::pair<std::string, std::size_t>>& bars) {
    if (bars.empty()) throw DataError("plot: empty histogram for " + path);
    std::size_t max_count = 1;
    for (const auto& b : bars) max_count = std::max(max_count, b.second);
    const double plot_w = kWidth - kMarginLeft - kMarginRight;
    const double plot_h = kHeight - kMarginTop - kMarginBottom;
    const double bw = plot_w / double(bars.size());

    std::ofstream out(path);
    if (!out) throw DataError("cannot write plot '" + path + "'");
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << kWidth << "' height='" << kHeight << "'>\n";
    out << "<rect width='100%' height='100%' fill='white'/>\n";
    out << "<text x='" << kWidth / 2 << "' y='14' text-anchor='middle' font-size='14'>" << title
        << "</text>\n";
    for (std::size_t i = 0; i < bars.size(); ++i) {
        double h = plot_h * double(bars[i].second) / double(max_count);
        double x = kMarginLeft + double(i) * bw;
        out << "<rect x='" << x + 1 << "' y='" << kMarginTop + plot_h - h << "' width='" << bw - 2
            << "' height='" << h << "' fill='#1f77b4'/>\n";
        out << "<text x='" << x + bw / 2 << "' y='" << kHeight - kMarginBottom + 14
            << "' text-anchor='middle' font-size='9'>" << bars[i].first << "</text>\n";
    }
    out << "<line x1='" << kMarginLeft << "' y1='" << kHeight - kMarginBottom << "' x2='"
        << kWidth - kMarginRight << "' y2='" << kHeight - kMarginBottom << "' stroke='black'/>\n";
    out << "</svg>\n";
}

void write_ppm(const std::string& path, const std::vector<unsigned char>& rgb, int w, int h) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write image '" + path + "'");
    out << "P6\n" << w << ' ' << h << "\n255\n";
    out.write(reinterpret_cast<const char*>(rgb.data()), std::streamsize(rgb.size()));
}

unsigned char to_byte(double v) { return static_cast<unsigned char>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5); }

// grayscale heat map scaled to the image size (nearest neighbour)
void write_heat_ppm(const std::string& path, const Matrix& grid, int out_size) {
    double lo = grid.minCoeff();
    double hi = grid.maxCoeff();
    double range = hi > lo ? hi - lo : 1.0;
    int cell = std::max(1, out_size / int(grid.rows()));
    int size = cell * int(grid.rows());
    std::vector<unsigned char> rgb(std::size_t(size) * std::size_t(size) * 3);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            double v = (grid(y / cell, x / cell) - lo) / range;
            std::size_t o = (std::size_t(y) * std::size_t(size) + std::size_t(x)) * 3;
            rgb[o] = to_byte(v);
            rgb[o + 1] = to_byte(v * 0.85);
            rgb[o + 2] = to_byte(1.0 - v);
        }
    write_ppm(path, rgb, size, size);
}

}  // namespace

std::vector<std::string> plot_metrics(const std::vector<EpochMetrics>& log, const std::string& out_dir) {
    if (log.empty()) throw DataError("plot_metrics: empty metrics log");
    std::filesystem::create_directories(out_dir);
    std::vector<std::string> written;

    std::vector<Series> train_series;
    std::vector<Series> val_series;
    std::vector<Series> mdo_series;
    for (std::size_t h = 0; h < log.front().heads.size(); ++h) {
        const std::string& label = log.front().heads[h].label;
        Series ld{label + " ld", {}}, ex{label + " exp", {}}, sm{label + " smooth", {}};
        Series vl{label + " total", {}};
        Series md{label + " mdo", {}};
        for (const auto& em : log) {
            ld.values.push_back(em.heads[h].train_loss.label_dist);
            ex.values.push_back(em.heads[h].train_loss.expectation_value);
            sm.values.push_back(em.heads[h].train_loss.smoothness);
            vl.values.push_back(em.heads[h].val_loss.total);
            md.values.push_back(em.heads[h].val_mdo);
        }
        train_series.push_back(std::move(ld));
        train_series.push_back(std::move(ex));
        train_series.push_back(std::move(sm));
        val_series.push_back(std::move(vl));
        mdo_series.push_back(std::move(md));
    }
    std::string p1 = out_dir + "/train_loss.svg";
    write_svg_curves(p1, "Training loss components by epoch", "loss", train_series, true);
    written.push_back(p1);
    std::string p2 = out_dir + "/val_loss.svg";
    write_svg_curves(p2, "Validation loss by epoch", "loss", val_series, true);
    written.push_back(p2);
    std::string p3 = out_dir + "/val_mdo.svg";
    write_svg_curves(p3, "Validation MDO by epoch", "MDO", mdo_series, false);
    written.push_back(p3);
    return written;
}

std::vector<std::string> plot_label_histograms(const DatasetIndex& index, const std::string& out_dir) {
    if (index.rows.empty()) throw DataError("plot_label_histograms: empty index");
    std::filesystem::create_directories(out_dir);
    std::vector<std::string> written;

    std::map<int, std::size_t> ds_counts;
    for (const auto& row : index.rows)
        if (row.ds_label) ++ds_counts[int(std::lround(*row.ds_label))];
    if (!ds_counts.empty()) {
        std::vector<std::pair<std::string, std::size_t>> bars;
        for (int c = 0; c <= 10; ++c) bars.push_back({std::to_string(c), ds_counts.count(c) ? ds_counts[c] : 0});
        std::string p = out_dir + "/ds_hist.svg";
        write_svg_histogram(p, "DS label abundance", bars);
        written.push_back(p);
    }

    auto numeric_hist = [&](auto getter, const std::string& name, const std::string& title) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (const auto& row : index.rows) {
            lo = std::min(lo, getter(row));
            hi = std::max(hi, getter(row));
        }
        const int bins = 20;
        std::vector<std::pair<std::string, std::size_t>> bars(bins);
        double width = hi > lo ? (hi - lo) / bins : 1.0;
        for (int b = 0; b < bins; ++b) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.3g", lo + width * (b + 0.5));
            bars[std::size_t(b)] = {b % 4 == 0 ? buf : "", 0};
        }
        for (const auto& row : index.rows) {
            int b = std::min(bins - 1, int((getter(row) - lo) / width));
            ++bars[std::size_t(std::max(0, b))].second;
        }
        std::string p = out_dir + "/" + name + "_hist.svg";
        write_svg_histogram(p, title, bars);
        written.push_back(p);
    };
    numeric_hist([](const IndexRow& r) { return r.gdd; }, "gdd", "GDD label abundance");
    numeric_hist([](const IndexRow& r) { return r.npg; }, "npg", "NPG label abundance");
    return written;
}

std::vector<std::string> plot_attention_panels(const Model& model, const MultispectralImage& img,
                                               const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    ModelOutput out = model.forward_one(img, true);
    std::vector<std::string> written;

    // input composite: R,G,B bands when available, else first channel
    {
        int rc = std::min(2, img.channels - 1), gc = std::min(1, img.channels - 1), bc = 0;
        double lo = *std::min_element(img.data.begin(), img.data.end());
        double hi = *std::max_element(img.data.begin(), img.data.end());
        double range = hi > lo ? hi - lo : 1.0;
        std::vector<unsigned char> rgb(std::size_t(img.height) * std::size_t(img.width) * 3);
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                std::size_t o = (std::size_t(y) * std::size_t(img.width) + std::size_t(x)) * 3;
                rgb[o] = to_byte((img.at(rc, y, x) - lo) / range);
                rgb[o + 1] = to_byte((img.at(gc, y, x) - lo) / range);
                rgb[o + 2] = to_byte((img.at(bc, y, x) - lo) / range);
            }
        std::string p = out_dir + "/panel_00_input.ppm";
        write_ppm(p, rgb, img.width, img.height);
        written.push_back(p);
    }

    RolloutMap rollout = attention_rollout(out.attentions);
    std::string pr = out_dir + "/panel_01_rollout.ppm";
    write_heat_ppm(pr, rollout.grid, img.width);
    written.push_back(pr);

    // per-layer maps: head-averaged class-token row over the patch grid
    const int side = model.vit_config().patches_per_side();
    for (std::size_t l = 0; l < out.attentions.size(); ++l) {
        Matrix mean = Matrix::Zero(out.attentions[l][0].rows(), out.attentions[l][0].cols());
        for (const auto& head : out.attentions[l]) mean += head;
        mean /= double(out.attentions[l].size());
        Matrix grid(side, side);
        for (int i = 0; i < side * side; ++i) grid(i / side, i % side) = mean(0, 1 + i);
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%s/panel_%02zu_layer%02zu.ppm", out_dir.c_str(), l + 2, l);
        write_heat_ppm(buf, grid, img.width);
        written.push_back(buf);
    }
    return written;
}

}  // namespace dldl
