#pragma once

#include <algorithm>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vf/errors.hpp"
#include "vf/train.hpp"

namespace vf {

namespace detail {

struct Panel {
  double x0, y0, w, h;  // plot area in svg coordinates
  double xmin, xmax, ymin, ymax;

  double px(double x) const { return x0 + (x - xmin) / (xmax - xmin) * w; }
  double py(double y) const { return y0 + h - (y - ymin) / (ymax - ymin) * h; }
};

inline std::string fmt_num(double v) {
  std::ostringstream os;
  os << std::setprecision(4) << v;
  return os.str();
}

inline void polyline(std::ostringstream& os, const Panel& p,
                     const std::vector<std::pair<double, double>>& pts, const char* color,
                     bool dashed) {
  os << "  <polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\"";
  if (dashed) os << " stroke-dasharray=\"5,3\"";
  os << " points=\"";
  for (auto [x, y] : pts) os << fmt_num(p.px(x)) << "," << fmt_num(p.py(y)) << " ";
  os << "\"/>\n";
}

inline void panel_frame(std::ostringstream& os, const Panel& p, const std::string& title,
                        const std::string& ylabel) {
  os << "  <rect x=\"" << p.x0 << "\" y=\"" << p.y0 << "\" width=\"" << p.w << "\" height=\""
     << p.h << "\" fill=\"none\" stroke=\"#444\"/>\n";
  os << "  <text x=\"" << p.x0 + p.w / 2 << "\" y=\"" << p.y0 - 10
     << "\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  for (int i = 0; i <= 4; ++i) {
    double fy = p.ymin + (p.ymax - p.ymin) * i / 4.0;
    double yy = p.py(fy);
    os << "  <line x1=\"" << p.x0 - 4 << "\" y1=\"" << yy << "\" x2=\"" << p.x0 << "\" y2=\"" << yy
       << "\" stroke=\"#444\"/>\n";
    os << "  <text x=\"" << p.x0 - 8 << "\" y=\"" << yy + 4
       << "\" text-anchor=\"end\" font-size=\"10\">" << fmt_num(fy) << "</text>\n";
    double fx = p.xmin + (p.xmax - p.xmin) * i / 4.0;
    double xx = p.px(fx);
    os << "  <line x1=\"" << xx << "\" y1=\"" << p.y0 + p.h << "\" x2=\"" << xx << "\" y2=\""
       << p.y0 + p.h + 4 << "\" stroke=\"#444\"/>\n";
    os << "  <text x=\"" << xx << "\" y=\"" << p.y0 + p.h + 16
       << "\" text-anchor=\"middle\" font-size=\"10\">" << fmt_num(fx) << "</text>\n";
  }
  os << "  <text x=\"" << p.x0 + p.w / 2 << "\" y=\"" << p.y0 + p.h + 32
     << "\" text-anchor=\"middle\" font-size=\"11\">episode</text>\n";
  os << "  <text x=\"" << p.x0 - 40 << "\" y=\"" << p.y0 + p.h / 2
     << "\" text-anchor=\"middle\" font-size=\"11\" transform=\"rotate(-90 " << p.x0 - 40 << " "
     << p.y0 + p.h / 2 << ")\">" << ylabel << "</text>\n";
}

}  // namespace detail

// Self-contained learning-curve figure: a loss panel and an accuracy panel,
// train and validation series each, episode on the x-axis. A second
// (comparison) run overlays as dashed lines.
inline std::string render_curves_svg(const std::vector<EpisodeRecord>& run,
                                     const std::vector<EpisodeRecord>& compare = {},
                                     const std::string& title = "",
                                     const std::string& compare_title = "") {
  if (run.empty()) throw DataError("no episodes to plot");
  double max_loss = 0, max_ep = 1;
  auto scan = [&](const std::vector<EpisodeRecord>& rows) {
    for (const auto& r : rows) {
      max_loss = std::max({max_loss, r.train_loss, r.val_loss});
      max_ep = std::max(max_ep, static_cast<double>(r.episode));
    }
  };
  scan(run);
  scan(compare);
  max_loss = std::max(max_loss * 1.05, 1e-6);

  detail::Panel loss{70, 40, 360, 280, 1, std::max(max_ep, 2.0), 0, max_loss};
  detail::Panel acc{550, 40, 360, 280, 1, std::max(max_ep, 2.0), 0, 1};

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 960 400\" "
        "font-family=\"sans-serif\">\n";
  os << "  <rect x=\"0\" y=\"0\" width=\"960\" height=\"400\" fill=\"white\"/>\n";
  detail::panel_frame(os, loss, title.empty() ? "loss" : title + " - loss", "BCE loss");
  detail::panel_frame(os, acc, title.empty() ? "accuracy" : title + " - accuracy", "accuracy");

  auto series = [&](const std::vector<EpisodeRecord>& rows, bool dashed) {
    std::vector<std::pair<double, double>> tl, vl, ta, va;
    for (const auto& r : rows) {
      tl.emplace_back(r.episode, r.train_loss);
      vl.emplace_back(r.episode, r.val_loss);
      ta.emplace_back(r.episode, r.train_acc);
      va.emplace_back(r.episode, r.val_acc);
    }
    detail::polyline(os, loss, tl, "#1f77b4", dashed);
    detail::polyline(os, loss, vl, "#d62728", dashed);
    detail::polyline(os, acc, ta, "#1f77b4", dashed);
    detail::polyline(os, acc, va, "#d62728", dashed);
  };
  series(run, false);
  if (!compare.empty()) series(compare, true);

  os << "  <text x=\"70\" y=\"356\" font-size=\"11\" fill=\"#1f77b4\">— train</text>\n";
  os << "  <text x=\"130\" y=\"356\" font-size=\"11\" fill=\"#d62728\">— validation</text>\n";
  if (!compare.empty())
    os << "  <text x=\"220\" y=\"356\" font-size=\"11\" fill=\"#444\">dashed: "
       << (compare_title.empty() ? "comparison run" : compare_title) << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

inline void write_curves_svg(const std::string& out_path, const std::vector<EpisodeRecord>& run,
                             const std::vector<EpisodeRecord>& compare = {},
                             const std::string& title = "",
                             const std::string& compare_title = "") {
  std::string svg = render_curves_svg(run, compare, title, compare_title);
  std::ofstream f(out_path, std::ios::trunc);
  if (!f) throw IoError("cannot write svg: " + out_path);
  f << svg;
  if (!f) throw IoError("short write to svg: " + out_path);
}

}  // namespace vf
