#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "pvosc/svg.hpp"

namespace pvosc::plot {

namespace {

constexpr double kW = 640.0, kH = 420.0;
constexpr double kLeft = 70.0, kRight = 150.0, kTop = 40.0, kBottom = 55.0;

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

const char* color(std::size_t i) { return kPalette[i % (sizeof kPalette / sizeof *kPalette)]; }

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", std::abs(v) < 1e-12 ? 0.0 : v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string header(const std::string& title) {
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kW) + "\" height=\"" + num(kH) +
                    "\" viewBox=\"0 0 " + num(kW) + " " + num(kH) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"" + num(kW / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" + escape(title) +
         "</text>\n";
    return s;
}

// "nice" axis range with about five ticks
struct Axis {
    double lo, hi, step;
};

Axis nice_axis(double lo, double hi) {
    if (!(hi > lo)) {
        const double pad = lo == 0.0 ? 1.0 : std::abs(lo) * 0.1;
        lo -= pad;
        hi += pad;
    }
    const double raw = (hi - lo) / 5.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 2.5, 5.0, 10.0}) {
        step = m * mag;
        if (step >= raw) break;
    }
    return {std::floor(lo / step) * step, std::ceil(hi / step) * step, step};
}

std::string legend(const std::vector<std::string>& names) {
    std::string s;
    double y = kTop + 10.0;
    for (std::size_t i = 0; i < names.size(); ++i) {
        const double x = kW - kRight + 15.0;
        s += "<line x1=\"" + num(x) + "\" y1=\"" + num(y) + "\" x2=\"" + num(x + 20) + "\" y2=\"" + num(y) +
             "\" stroke=\"" + color(i) + "\" stroke-width=\"2\"/>\n";
        s += "<text x=\"" + num(x + 26) + "\" y=\"" + num(y + 4) + "\">" + escape(names[i]) + "</text>\n";
        y += 18.0;
    }
    return s;
}

}  // namespace

std::string render(const XYPlot& p) {
    double xlo = 1e300, xhi = -1e300, ylo = 1e300, yhi = -1e300;
    for (const auto& s : p.series) {
        if (s.x.size() != s.y.size()) throw std::invalid_argument("plot series '" + s.name + "' has x/y length mismatch");
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            xlo = std::min(xlo, s.x[i]);
            xhi = std::max(xhi, s.x[i]);
            ylo = std::min(ylo, s.y[i]);
            yhi = std::max(yhi, s.y[i]);
        }
    }
    if (xlo > xhi) xlo = 0.0, xhi = 1.0, ylo = 0.0, yhi = 1.0;
    const Axis ax = nice_axis(xlo, xhi), ay = nice_axis(ylo, yhi);
    const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
    auto sx = [&](double x) { return kLeft + (x - ax.lo) / (ax.hi - ax.lo) * pw; };
    auto sy = [&](double y) { return kTop + ph - (y - ay.lo) / (ay.hi - ay.lo) * ph; };

    std::string s = header(p.title);
    s += "<rect x=\"" + num(kLeft) + "\" y=\"" + num(kTop) + "\" width=\"" + num(pw) + "\" height=\"" + num(ph) +
         "\" fill=\"none\" stroke=\"black\"/>\n";
    for (double t = ax.lo; t <= ax.hi + 1e-9 * ax.step; t += ax.step) {
        s += "<line x1=\"" + num(sx(t)) + "\" y1=\"" + num(kTop) + "\" x2=\"" + num(sx(t)) + "\" y2=\"" +
             num(kTop + ph) + "\" stroke=\"#ddd\"/>\n";
        s += "<text x=\"" + num(sx(t)) + "\" y=\"" + num(kTop + ph + 16) + "\" text-anchor=\"middle\">" + tick(t) +
             "</text>\n";
    }
    for (double t = ay.lo; t <= ay.hi + 1e-9 * ay.step; t += ay.step) {
        s += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(sy(t)) + "\" x2=\"" + num(kLeft + pw) + "\" y2=\"" +
             num(sy(t)) + "\" stroke=\"#ddd\"/>\n";
        s += "<text x=\"" + num(kLeft - 6) + "\" y=\"" + num(sy(t) + 4) + "\" text-anchor=\"end\">" + tick(t) +
             "</text>\n";
    }
    s += "<text x=\"" + num(kLeft + pw / 2) + "\" y=\"" + num(kH - 14) + "\" text-anchor=\"middle\">" +
         escape(p.x_label) + "</text>\n";
    s += "<text x=\"18\" y=\"" + num(kTop + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " +
         num(kTop + ph / 2) + ")\">" + escape(p.y_label) + "</text>\n";

    std::vector<std::string> names;
    for (std::size_t k = 0; k < p.series.size(); ++k) {
        const auto& ser = p.series[k];
        names.push_back(ser.name);
        if (p.lines && ser.x.size() > 1) {
            s += "<polyline fill=\"none\" stroke=\"" + std::string(color(k)) + "\" stroke-width=\"2\" points=\"";
            for (std::size_t i = 0; i < ser.x.size(); ++i) {
                if (!std::isfinite(ser.x[i]) || !std::isfinite(ser.y[i])) continue;
                s += num(sx(ser.x[i])) + "," + num(sy(ser.y[i])) + " ";
            }
            s += "\"/>\n";
        }
        if (p.markers || !p.lines) {
            for (std::size_t i = 0; i < ser.x.size(); ++i) {
                if (!std::isfinite(ser.x[i]) || !std::isfinite(ser.y[i])) continue;
                s += "<circle cx=\"" + num(sx(ser.x[i])) + "\" cy=\"" + num(sy(ser.y[i])) + "\" r=\"3.5\" fill=\"" +
                     color(k) + "\"/>\n";
            }
        }
    }
    s += legend(names);
    s += "</svg>\n";
    return s;
}

std::string render(const PolarPlot& p) {
    double mmax = 0.0;
    for (const auto& ser : p.series)
        for (const auto& pt : ser.points) mmax = std::max(mmax, pt.magnitude);
    if (!(mmax > 0.0)) mmax = 1.0;
    const double cx = kLeft + (kW - kLeft - kRight) / 2.0, cy = kTop + (kH - kTop - kBottom) / 2.0 + 10.0;
    const double r = std::min(kW - kLeft - kRight, kH - kTop - kBottom) / 2.0;

    std::string s = header(p.title);
    for (double f : {0.25, 0.5, 0.75, 1.0}) {
        s += "<circle cx=\"" + num(cx) + "\" cy=\"" + num(cy) + "\" r=\"" + num(f * r) +
             "\" fill=\"none\" stroke=\"#ddd\"/>\n";
    }
    for (int deg = 0; deg < 360; deg += 30) {
        const double a = deg * M_PI / 180.0;
        s += "<line x1=\"" + num(cx) + "\" y1=\"" + num(cy) + "\" x2=\"" + num(cx + r * std::cos(a)) + "\" y2=\"" +
             num(cy - r * std::sin(a)) + "\" stroke=\"#eee\"/>\n";
        s += "<text x=\"" + num(cx + (r + 14) * std::cos(a)) + "\" y=\"" + num(cy - (r + 14) * std::sin(a) + 4) +
             "\" text-anchor=\"middle\" font-size=\"10\">" + std::to_string(deg) + "</text>\n";
    }
    std::vector<std::string> names;
    for (std::size_t k = 0; k < p.series.size(); ++k) {
        names.push_back(p.series[k].name);
        for (const auto& pt : p.series[k].points) {
            const double len = pt.magnitude / mmax * r;
            const double x = cx + len * std::cos(pt.angle), y = cy - len * std::sin(pt.angle);
            s += "<line x1=\"" + num(cx) + "\" y1=\"" + num(cy) + "\" x2=\"" + num(x) + "\" y2=\"" + num(y) +
                 "\" stroke=\"" + color(k) + "\" stroke-width=\"2\"/>\n";
            s += "<circle cx=\"" + num(x) + "\" cy=\"" + num(y) + "\" r=\"2.5\" fill=\"" + color(k) + "\"/>\n";
            if (!pt.label.empty()) {
                s += "<text x=\"" + num(x + 4) + "\" y=\"" + num(y - 4) + "\" font-size=\"10\" fill=\"" + color(k) +
                     "\">" + escape(pt.label) + "</text>\n";
            }
        }
    }
    s += legend(names);
    s += "</svg>\n";
    return s;
}

std::string render(const HistogramPlot& p) {
    if (!(p.width > 0.0)) throw std::invalid_argument("histogram bin width must be positive");
    const int nb = static_cast<int>(p.counts.size());
    const int cmax = nb ? std::max(1, *std::max_element(p.counts.begin(), p.counts.end())) : 1;
    const Axis ax = nice_axis(p.origin, p.origin + p.width * std::max(1, nb));
    const Axis ay = nice_axis(0.0, cmax);
    const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
    auto sx = [&](double x) { return kLeft + (x - ax.lo) / (ax.hi - ax.lo) * pw; };
    auto sy = [&](double y) { return kTop + ph - (y - ay.lo) / (ay.hi - ay.lo) * ph; };

    std::string s = header(p.title);
    s += "<rect x=\"" + num(kLeft) + "\" y=\"" + num(kTop) + "\" width=\"" + num(pw) + "\" height=\"" + num(ph) +
         "\" fill=\"none\" stroke=\"black\"/>\n";
    for (double t = ax.lo; t <= ax.hi + 1e-9 * ax.step; t += ax.step) {
        s += "<text x=\"" + num(sx(t)) + "\" y=\"" + num(kTop + ph + 16) + "\" text-anchor=\"middle\">" + tick(t) +
             "</text>\n";
    }
    for (double t = ay.lo; t <= ay.hi + 1e-9 * ay.step; t += ay.step) {
        s += "<text x=\"" + num(kLeft - 6) + "\" y=\"" + num(sy(t) + 4) + "\" text-anchor=\"end\">" + tick(t) +
             "</text>\n";
    }
    for (int i = 0; i < nb; ++i) {
        const double x0 = sx(p.origin + i * p.width), x1 = sx(p.origin + (i + 1) * p.width);
        const double y = sy(p.counts[static_cast<std::size_t>(i)]);
        s += "<rect x=\"" + num(x0) + "\" y=\"" + num(y) + "\" width=\"" + num(std::max(0.5, x1 - x0 - 1.0)) +
             "\" height=\"" + num(kTop + ph - y) + "\" fill=\"" + color(0) + "\"/>\n";
    }
    s += "<text x=\"" + num(kLeft + pw / 2) + "\" y=\"" + num(kH - 14) + "\" text-anchor=\"middle\">" +
         escape(p.x_label) + "</text>\n";
    s += "<text x=\"18\" y=\"" + num(kTop + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " +
         num(kTop + ph / 2) + ")\">count</text>\n";
    s += "</svg>\n";
    return s;
}

void save_svg(const std::filesystem::path& path, const std::string& svg) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << svg;
}

}  // namespace pvosc::plot
