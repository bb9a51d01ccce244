#pragma once

// Style-gap summary between two prototypes: per-layer mean absolute
// differences of the channel statistics, plus overlaid histograms of the
// channel means of each prototype.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "ossa/io.hpp"
#include "ossa/json_util.hpp"
#include "ossa/prototype.hpp"

namespace ossa {

struct LayerGap {
    std::string layer;
    std::size_t channels = 0;
    double mean_abs_dmu = 0.0;
    double mean_abs_dsigma = 0.0;
};

struct MuHistogram {
    std::string layer;
    double lo = 0.0;
    double hi = 1.0;
    std::vector<std::size_t> a;
    std::vector<std::size_t> b;

    [[nodiscard]] double bin_width() const { return (hi - lo) / static_cast<double>(a.size()); }
};

struct GapReport {
    std::string label_a = "a";
    std::string label_b = "b";
    std::vector<LayerGap> layers;
    std::vector<MuHistogram> histograms;
};

namespace detail {

inline void require_same_shape(const ChannelStats &a, const ChannelStats &b, std::string_view what) {
    if (a.batch() != b.batch() || a.channels() != b.channels()) {
        throw ShapeMismatch(std::string(what) + ": statistics have different shapes");
    }
}

} // namespace detail

/// Mean over all entries of |a.mu - b.mu|.
inline double mean_abs_dmu(const ChannelStats &a, const ChannelStats &b) {
    detail::require_same_shape(a, b, "mean_abs_dmu");
    double s = 0.0;
    const auto x = a.mu.data();
    const auto y = b.mu.data();
    for (std::size_t i = 0; i < x.size(); ++i) s += std::abs(x[i] - y[i]);
    return s / static_cast<double>(x.size());
}

inline double mean_abs_dsigma(const ChannelStats &a, const ChannelStats &b) {
    detail::require_same_shape(a, b, "mean_abs_dsigma");
    double s = 0.0;
    const auto x = a.sigma.data();
    const auto y = b.sigma.data();
    for (std::size_t i = 0; i < x.size(); ++i) s += std::abs(x[i] - y[i]);
    return s / static_cast<double>(x.size());
}

/// Both prototypes must cover the same layers with the same channel counts.
/// Histogram bins span the joint range of the two sets of channel means.
inline GapReport gap_report(const StylePrototype &a, const StylePrototype &b, std::size_t bins = 20,
                            std::string label_a = "a", std::string label_b = "b") {
    if (bins < 1) throw InvalidInput("gap_report: bins must be >= 1");
    if (a.layers.size() != b.layers.size()) throw ShapeMismatch("gap_report: prototypes cover different layers");
    GapReport r;
    r.label_a = std::move(label_a);
    r.label_b = std::move(label_b);
    for (const auto &[name, sa] : a.layers) {
        auto it = b.layers.find(name);
        if (it == b.layers.end()) throw ShapeMismatch("gap_report: layer '" + name + "' missing from second prototype");
        const ChannelStats &sb = it->second;
        if (sa.channels() != sb.channels() || sa.batch() != sb.batch()) {
            throw ShapeMismatch("gap_report: layer '" + name + "' has " + std::to_string(sa.channels()) + " vs " +
                                std::to_string(sb.channels()) + " channels");
        }
        r.layers.push_back({name, sa.channels(), mean_abs_dmu(sa, sb), mean_abs_dsigma(sa, sb)});

        MuHistogram h;
        h.layer = name;
        const auto mu_a = sa.mu.data();
        const auto mu_b = sb.mu.data();
        auto [amin, amax] = std::minmax_element(mu_a.begin(), mu_a.end());
        auto [bmin, bmax] = std::minmax_element(mu_b.begin(), mu_b.end());
        h.lo = std::min(*amin, *bmin);
        h.hi = std::max(*amax, *bmax);
        if (!(h.hi > h.lo)) {
            h.lo -= 0.5;
            h.hi += 0.5;
        }
        h.a.assign(bins, 0);
        h.b.assign(bins, 0);
        auto bin_of = [&](double v) {
            const auto k = static_cast<std::size_t>((v - h.lo) / (h.hi - h.lo) * static_cast<double>(bins));
            return std::min(k, bins - 1);
        };
        for (double v : mu_a) ++h.a[bin_of(v)];
        for (double v : mu_b) ++h.b[bin_of(v)];
        r.histograms.push_back(std::move(h));
    }
    return r;
}

inline std::string gap_table_csv(const GapReport &r) {
    std::ostringstream out;
    out << "layer,channels,mean_abs_dmu,mean_abs_dsigma\n";
    for (const auto &g : r.layers) {
        out << g.layer << ',' << g.channels << ',' << detail::fmt(g.mean_abs_dmu) << ','
            << detail::fmt(g.mean_abs_dsigma) << '\n';
    }
    return out.str();
}

inline json gap_histograms_json(const GapReport &r) {
    json layers = json::object();
    for (const auto &h : r.histograms) {
        std::vector<double> edges;
        for (std::size_t i = 0; i <= h.a.size(); ++i) edges.push_back(h.lo + h.bin_width() * static_cast<double>(i));
        layers[h.layer] = json{{"edges", edges}, {r.label_a, h.a}, {r.label_b, h.b}};
    }
    json gaps = json::object();
    for (const auto &g : r.layers) {
        gaps[g.layer] = json{{"channels", g.channels},
                             {"mean_abs_dmu", g.mean_abs_dmu},
                             {"mean_abs_dsigma", g.mean_abs_dsigma}};
    }
    return json{{"labels", {r.label_a, r.label_b}}, {"gaps", gaps}, {"histograms", layers}};
}

/// One panel per layer with the two histograms drawn translucently on top
/// of each other.
inline std::string gap_histograms_svg(const GapReport &r) {
    constexpr double kPanelW = 360;
    constexpr double kPanelH = 220;
    constexpr double kMargin = 36;
    const double width = kPanelW * static_cast<double>(std::max<std::size_t>(r.histograms.size(), 1));
    const double height = kPanelH + 40;
    using detail::fmt;
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width) << "\" height=\"" << fmt(height)
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<rect x=\"10\" y=\"8\" width=\"10\" height=\"10\" fill=\"#1f77b4\" fill-opacity=\"0.55\"/>"
      << "<text x=\"24\" y=\"17\">" << r.label_a << "</text>\n";
    s << "<rect x=\"110\" y=\"8\" width=\"10\" height=\"10\" fill=\"#ff7f0e\" fill-opacity=\"0.55\"/>"
      << "<text x=\"124\" y=\"17\">" << r.label_b << "</text>\n";
    for (std::size_t p = 0; p < r.histograms.size(); ++p) {
        const MuHistogram &h = r.histograms[p];
        const double x0 = kPanelW * static_cast<double>(p) + kMargin;
        const double y0 = 40;
        const double pw = kPanelW - 2 * kMargin;
        const double ph = kPanelH - kMargin;
        std::size_t peak = 1;
        for (std::size_t i = 0; i < h.a.size(); ++i) peak = std::max({peak, h.a[i], h.b[i]});
        const double bw = pw / static_cast<double>(h.a.size());
        auto bars = [&](const std::vector<std::size_t> &counts, const char *color) {
            for (std::size_t i = 0; i < counts.size(); ++i) {
                if (counts[i] == 0) continue;
                const double bh = ph * static_cast<double>(counts[i]) / static_cast<double>(peak);
                s << "<rect x=\"" << fmt(x0 + bw * static_cast<double>(i)) << "\" y=\"" << fmt(y0 + ph - bh)
                  << "\" width=\"" << fmt(bw) << "\" height=\"" << fmt(bh) << "\" fill=\"" << color
                  << "\" fill-opacity=\"0.55\"/>\n";
            }
        };
        bars(h.a, "#1f77b4");
        bars(h.b, "#ff7f0e");
        s << "<line x1=\"" << fmt(x0) << "\" y1=\"" << fmt(y0 + ph) << "\" x2=\"" << fmt(x0 + pw) << "\" y2=\""
          << fmt(y0 + ph) << "\" stroke=\"black\"/>\n";
        s << "<text x=\"" << fmt(x0) << "\" y=\"" << fmt(y0 + ph + 14) << "\">" << fmt(h.lo) << "</text>\n";
        s << "<text x=\"" << fmt(x0 + pw) << "\" y=\"" << fmt(y0 + ph + 14) << "\" text-anchor=\"end\">" << fmt(h.hi)
          << "</text>\n";
        s << "<text x=\"" << fmt(x0 + pw / 2) << "\" y=\"" << fmt(y0 - 6) << "\" text-anchor=\"middle\">" << h.layer
          << ": channel means</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

/// gap.csv, gap_hist.json and gap_hist.svg under `dir`.
inline void write_gap_report(const GapReport &r, const std::filesystem::path &dir) {
    write_file_atomic(dir / "gap.csv", gap_table_csv(r));
    write_file_atomic(dir / "gap_hist.json", gap_histograms_json(r).dump(2) + "\n");
    write_file_atomic(dir / "gap_hist.svg", gap_histograms_svg(r));
}

} // namespace ossa
