/* Copyright 2026 The LayoutForge Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/


#pragma once

#include <algorithm>
#include <cstdio>
#include <string>
#include <vector>

#include "layoutforge/layout.hpp"

namespace lf {

inline std::vector<std::string> default_palette() {
  return {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
          "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac"};
}

inline std::string xml_escape(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

// Renders one rectangle per element, filled by category and labelled with the
// category name. The longer canvas side maps to 1000 user units.
inline std::string render_svg(const Layout& layout, const LayoutSchema& schema,
                              const std::vector<std::string>& palette = default_palette()) {
  require(!palette.empty(), ErrorCode::kInvalidInput, "render_svg: empty palette");
  const double scale = 1000.0 / std::max(layout.canvas_w, layout.canvas_h);
  const double width = layout.canvas_w * scale, height = layout.canvas_h * scale;
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return std::string(buf);
  };
  std::string svg = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " + num(width) + " " + num(height) +
         "\" width=\"" + num(width) + "\" height=\"" + num(height) + "\" style=\"background:#ffffff\">\n";
  for (const auto& e : layout.elements) {
    const auto cat = static_cast<std::size_t>(e.category);
    const std::string name = cat < schema.categories.size() ? schema.categories[cat] : std::to_string(e.category);
    const std::string& fill = palette[cat % palette.size()];
    const double left = (e.x - e.w / 2) * width, top = (e.y - e.h / 2) * height;
    svg += "  <g class=\"element\">\n";
    svg += "    <rect x=\"" + num(left) + "\" y=\"" + num(top) + "\" width=\"" + num(e.w * width) + "\" height=\"" +
           num(e.h * height) + "\" fill=\"" + fill + "\" fill-opacity=\"0.6\" stroke=\"" + fill + "\"/>\n";
    svg += "    <text x=\"" + num(left + 4) + "\" y=\"" + num(top + 14) +
           "\" font-family=\"sans-serif\" font-size=\"12\">" + xml_escape(name) + "</text>\n";
    svg += "  </g>\n";
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace lf
