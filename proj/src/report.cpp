#include "korn/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace korn {

namespace {

std::string short_num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

// Signed display score in [-1, 1]; positive means the check passed with
// margin. Checks against a positive tolerance are scored on a log scale
// (each decade of headroom counts), folded multi-clause checks against
// threshold 0 already report a margin in [-1, inf) and are used directly.
double bar_score(const CheckReport& r) {
  double v;
  if (r.threshold > 0.0) {
    const double ratio = std::max(r.residual / r.threshold, 1e-16);
    v = -std::log10(ratio) / 16.0;
  } else {
    v = -r.residual;
  }
  return std::clamp(v, -1.0, 1.0);
}

}  // namespace

bool write_residual_svg(const std::vector<CheckReport>& reports,
                        const std::string& path) {
  try {
    const int row_h = 26;
    const int top = 46;
    const int width = 920;
    const int axis_x = 640;
    const int bar_max = 250;
    const int height = top + row_h * static_cast<int>(reports.size()) + 14;

    std::ofstream out(path, std::ios::binary);
    if (!out) return false;

    char head[256];
    std::snprintf(head, sizeof head,
                  "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" "
                  "height=\"%d\" font-family=\"monospace\" font-size=\"12\">\n",
                  width, height);
    out << head;
    out << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
    out << "<text x=\"16\" y=\"22\" font-size=\"14\" fill=\"#222\">"
           "check residuals (bar right of axis = margin below threshold)"
           "</text>\n";
    char axis[160];
    std::snprintf(axis, sizeof axis,
                  "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" "
                  "stroke=\"#999\" stroke-width=\"1\"/>\n",
                  axis_x, top - 10, axis_x, height - 8);
    out << axis;

    for (std::size_t i = 0; i < reports.size(); ++i) {
      const CheckReport& r = reports[i];
      const int y = top + row_h * static_cast<int>(i);
      const int text_y = y + 16;
      const double v = bar_score(r);
      const int len = static_cast<int>(std::lround(std::fabs(v) * bar_max));
      const int bx = v >= 0.0 ? axis_x : axis_x - len;
      const char* color = r.passed ? "#2e8b57" : "#c0392b";

      char row[512];
      std::snprintf(row, sizeof row,
                    "<text x=\"16\" y=\"%d\" fill=\"#222\">%s</text>\n"
                    "<text x=\"250\" y=\"%d\" fill=\"%s\">%s</text>\n"
                    "<text x=\"300\" y=\"%d\" fill=\"#555\">res %s / thr %s</text>\n",
                    text_y, r.check_id.c_str(), text_y, color,
                    r.passed ? "pass" : "FAIL", text_y,
                    short_num(r.residual).c_str(), short_num(r.threshold).c_str());
      out << row;
      if (len > 0) {
        char bar[256];
        std::snprintf(bar, sizeof bar,
                      "<rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"14\" "
                      "fill=\"%s\" fill-opacity=\"0.8\"/>\n",
                      bx, y + 5, len, color);
        out << bar;
      }
    }
    out << "</svg>\n";
    out.flush();
    return out.good();
  } catch (...) {
    return false;
  }
}

}  // namespace korn
