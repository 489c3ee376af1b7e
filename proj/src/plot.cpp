#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "cldpc/harness.hpp"

namespace cldpc {

namespace {

// Diverging blue-white-red, v in [-1, 1].
std::string diverging(double v) {
  v = std::clamp(v, -1.0, 1.0);
  int r = 255, g = 255, b = 255;
  if (v > 0) {
    g = b = static_cast<int>(std::lround(255 * (1 - v)));
  } else if (v < 0) {
    r = g = static_cast<int>(std::lround(255 * (1 + v)));
  }
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace

// Three strips (u, u_d, u - u_d), time down, space across. Unobserved cells
// are drawn with hatching grey in the error strip.
std::string svg_heat_strips(const StoredResult& r) {
  const int N = r.N, d = r.d_x, cell = 6, gap = 24, top = 30;
  const int strip_w = d * cell, strip_h = N * cell;
  const auto sd = static_cast<std::size_t>(d);
  double vmax = 1e-12;
  for (std::size_t i = sd; i < r.env_states.size(); ++i) vmax = std::max(vmax, std::abs(r.env_states[i]));
  for (double v : r.u_d) vmax = std::max(vmax, std::abs(v));

  std::ostringstream os;
  const int width = 3 * strip_w + 4 * gap;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
     << strip_h + top + gap << "\" font-family=\"monospace\" font-size=\"11\">\n";
  os << "<text x=\"" << gap << "\" y=\"14\">" << r.method << ' ' << r.setting << " seed " << r.seed
     << "  J=" << num(r.J) << "  nfe=" << r.nfe << "  scale=" << num(vmax) << "</text>\n";
  const char* titles[3] = {"u", "u_d", "u - u_d"};
  for (int s = 0; s < 3; ++s) {
    const int x0 = gap + s * (strip_w + gap);
    os << "<g id=\"strip-" << s << "\">\n";
    os << "<text x=\"" << x0 << "\" y=\"" << top - 4 << "\">" << titles[s] << "</text>\n";
    for (int t = 0; t < N; ++t) {
      for (int x = 0; x < d; ++x) {
        const auto i = static_cast<std::size_t>(t) * sd + static_cast<std::size_t>(x);
        const double u = r.env_states[i + sd], ud = r.u_d[i];
        std::string fill;
        if (s == 0) fill = diverging(u / vmax);
        else if (s == 1) fill = diverging(ud / vmax);
        else fill = r.obs_mask[static_cast<std::size_t>(x)] ? diverging((u - ud) / vmax) : "#bbbbbb";
        os << "<rect x=\"" << x0 + x * cell << "\" y=\"" << top + t * cell << "\" width=\"" << cell
           << "\" height=\"" << cell << "\" fill=\"" << fill << "\"/>\n";
      }
    }
    os << "</g>\n";
  }
  os << "</svg>\n";
  return os.str();
}

// One column per method: each episode's J as a dot, the mean as a bar.
// Summary rows (seed "mean") are skipped. Log scale when J spans > 2 decades.
std::string svg_j_distribution(const std::vector<MetricsRow>& rows) {
  std::map<std::string, std::vector<double>> by_method;
  std::vector<std::string> order;
  for (const auto& r : rows) {
    if (r.seed == "mean" || !std::isfinite(r.J)) continue;
    if (!by_method.count(r.method)) order.push_back(r.method);
    by_method[r.method].push_back(r.J);
  }
  double lo = INFINITY, hi = -INFINITY;
  for (auto& [m, v] : by_method)
    for (double j : v) lo = std::min(lo, j), hi = std::max(hi, j);
  if (order.empty()) lo = 0, hi = 1;
  const bool logy = lo > 0 && hi / lo > 100;
  auto tr = [&](double v) { return logy ? std::log10(v) : v; };
  double a = tr(lo), b = tr(hi);
  if (b - a < 1e-12) a -= 0.5, b += 0.5;
  if (!logy) a = std::min(a, 0.0);

  const int col = 110, left = 70, top = 20, plot_h = 300;
  const int width = left + col * static_cast<int>(std::max<std::size_t>(order.size(), 1)) + 20;
  auto y_of = [&](double v) { return top + plot_h - (tr(v) - a) / (b - a) * plot_h; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << plot_h + top + 50
     << "\" font-family=\"monospace\" font-size=\"11\">\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + plot_h
     << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double t = a + (b - a) * k / 4.0;
    const double y = top + plot_h - plot_h * k / 4.0;
    os << "<text x=\"4\" y=\"" << y + 4 << "\">" << num(logy ? std::pow(10.0, t) : t) << "</text>\n";
  }
  for (std::size_t m = 0; m < order.size(); ++m) {
    const auto& v = by_method[order[m]];
    const double cx = left + col * (static_cast<double>(m) + 0.5);
    double mean = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      mean += v[i];
      const double jitter = (static_cast<double>(i % 7) - 3.0) * 5.0;
      os << "<circle cx=\"" << cx + jitter << "\" cy=\"" << y_of(v[i]) << "\" r=\"3\" fill=\"#3366cc\" "
         << "fill-opacity=\"0.7\"/>\n";
    }
    mean /= static_cast<double>(v.size());
    os << "<line x1=\"" << cx - 30 << "\" x2=\"" << cx + 30 << "\" y1=\"" << y_of(mean) << "\" y2=\""
       << y_of(mean) << "\" stroke=\"#cc3333\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << cx - 40 << "\" y=\"" << top + plot_h + 16 << "\">" << order[m] << "</text>\n";
    os << "<text x=\"" << cx - 40 << "\" y=\"" << top + plot_h + 30 << "\">" << num(mean) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace cldpc
