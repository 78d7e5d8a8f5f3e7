#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "expfuse/evalcli/benchmark.hpp"
#include "expfuse/imgcore/error.hpp"

namespace expfuse::evalcli {

namespace {

constexpr int kWidth = 640;
constexpr int kHeight = 360;
constexpr int kMargin = 48;

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

// Minimal bar chart; non-finite values are drawn as empty slots.
std::string bar_chart(const std::string& title, const std::vector<std::string>& labels,
                      const std::vector<double>& values) {
  double lo = 0.0, hi = 0.0;
  for (double v : values)
    if (std::isfinite(v)) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (hi == lo) hi = lo + 1.0;
  const double plot_w = kWidth - 2 * kMargin, plot_h = kHeight - 2 * kMargin;
  auto ypos = [&](double v) { return kMargin + plot_h * (hi - v) / (hi - lo); };

  std::ostringstream s;
  s.precision(6);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
    << escape(title) << "</text>\n";
  s << "<line x1=\"" << kMargin << "\" y1=\"" << ypos(0.0) << "\" x2=\"" << kWidth - kMargin << "\" y2=\"" << ypos(0.0)
    << "\" stroke=\"black\"/>\n";
  s << "<text x=\"4\" y=\"" << ypos(hi) + 4 << "\" font-family=\"sans-serif\" font-size=\"10\">" << hi << "</text>\n";
  s << "<text x=\"4\" y=\"" << ypos(lo) + 4 << "\" font-family=\"sans-serif\" font-size=\"10\">" << lo << "</text>\n";
  const double slot = values.empty() ? plot_w : plot_w / static_cast<double>(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double x = kMargin + slot * static_cast<double>(i);
    if (std::isfinite(values[i])) {
      const double top = std::min(ypos(values[i]), ypos(0.0));
      const double h = std::abs(ypos(values[i]) - ypos(0.0));
      s << "<rect x=\"" << x + slot * 0.1 << "\" y=\"" << top << "\" width=\"" << slot * 0.8 << "\" height=\"" << h
        << "\" fill=\"steelblue\"/>\n";
    }
    s << "<text x=\"" << x + slot / 2 << "\" y=\"" << kHeight - kMargin + 14
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"9\">" << escape(labels[i]) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

void write(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw IoError(IoErrc::kWriteFailed, path.string());
}

}  // namespace

void write_plots(const EvalReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::map<std::string, std::pair<std::vector<std::string>, std::vector<double>>> series;
  for (const SceneRecord& r : report.records)
    for (const auto& [name, v] : r.metrics) {
      series[name].first.push_back(r.scene);
      series[name].second.push_back(v);
    }

  for (const auto& [name, sv] : series) {
    const auto& [scenes, values] = sv;
    write(dir / ("scenes_" + name + ".svg"), bar_chart(name + " per scene", scenes, values));

    // Ten equal bins over the finite range.
    std::vector<double> finite;
    for (double v : values)
      if (std::isfinite(v)) finite.push_back(v);
    constexpr int kBins = 10;
    std::vector<double> counts(kBins, 0.0);
    std::vector<std::string> edges(kBins);
    if (!finite.empty()) {
      const auto [mn, mx] = std::minmax_element(finite.begin(), finite.end());
      const double lo = *mn, width = (*mx - *mn) > 0 ? (*mx - *mn) / kBins : 1.0;
      for (double v : finite) counts[std::min(kBins - 1, static_cast<int>((v - lo) / width))] += 1.0;
      for (int b = 0; b < kBins; ++b) {
        std::ostringstream e;
        e.precision(3);
        e << lo + width * b;
        edges[b] = e.str();
      }
    }
    write(dir / ("hist_" + name + ".svg"), bar_chart(name + " distribution", edges, counts));
  }
}

}  // namespace expfuse::evalcli
