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
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "layoutforge/error.hpp"

namespace lf {

using json = nlohmann::json;

// Semantic attribute groups: category (C), size (S) and position (P).
enum class Group : std::uint8_t { kCategory = 0, kSize = 1, kPosition = 2 };

inline constexpr std::array<Group, 3> kAllGroups = {Group::kCategory, Group::kSize,
                                                    Group::kPosition};

inline char group_tag(Group g) {
  switch (g) {
    case Group::kCategory: return 'C';
    case Group::kSize: return 'S';
    case Group::kPosition: return 'P';
  }
  return '?';
}

inline Group group_from_tag(char tag) {
  switch (tag) {
    case 'C': case 'c': return Group::kCategory;
    case 'S': case 's': return Group::kSize;
    case 'P': case 'p': return Group::kPosition;
    default: fail(ErrorCode::kInvalidInput, std::string("unknown group tag '") + tag + "'");
  }
}

// Parses an order string such as "CSP" into a list of groups.
inline std::vector<Group> parse_group_order(std::string_view text) {
  std::vector<Group> order;
  for (char c : text) {
    if (c == '>' || c == '-' || c == ',' || c == ' ') continue;
    order.push_back(group_from_tag(c));
  }
  return order;
}

inline std::string group_order_string(std::span<const Group> order) {
  std::string s;
  for (Group g : order) s.push_back(group_tag(g));
  return s;
}

enum class Attr : std::uint8_t { kCategory = 0, kX = 1, kY = 2, kW = 3, kH = 4 };

inline constexpr int kNumAttrs = 5;
inline constexpr std::array<Attr, 4> kCoordAttrs = {Attr::kX, Attr::kY, Attr::kW, Attr::kH};

inline std::string_view attr_name(Attr a) {
  switch (a) {
    case Attr::kCategory: return "category";
    case Attr::kX: return "x";
    case Attr::kY: return "y";
    case Attr::kW: return "w";
    case Attr::kH: return "h";
  }
  return "?";
}

inline Attr attr_from_name(std::string_view name) {
  for (int i = 0; i < kNumAttrs; ++i) {
    const auto a = static_cast<Attr>(i);
    if (attr_name(a) == name) return a;
  }
  fail(ErrorCode::kInvalidInput, "unknown attribute '" + std::string(name) + "'");
}

inline bool is_coord(Attr a) { return a != Attr::kCategory; }
// Index of a coordinate attribute within (x, y, w, h).
inline int coord_index(Attr a) { return static_cast<int>(a) - 1; }

struct LayoutSchema {
  std::vector<Attr> attributes{Attr::kCategory, Attr::kX, Attr::kY, Attr::kW, Attr::kH};
  // Indexed by Attr.
  std::array<Group, kNumAttrs> groups{Group::kCategory, Group::kPosition, Group::kPosition,
                                      Group::kSize, Group::kSize};
  int num_bins = 32;
  std::vector<std::string> categories;
  int max_elements = 25;

  int attributes_per_element() const { return static_cast<int>(attributes.size()); }
  int max_seq_len() const { return 2 + attributes_per_element() * max_elements; }
  Group group_of(Attr a) const { return groups[static_cast<std::size_t>(a)]; }

  // Groups that own at least one attribute, in C, S, P order.
  std::vector<Group> present_groups() const {
    std::vector<Group> out;
    for (Group g : kAllGroups) {
      if (std::any_of(attributes.begin(), attributes.end(),
                      [&](Attr a) { return group_of(a) == g; }))
        out.push_back(g);
    }
    return out;
  }

  int category_index(std::string_view name) const {
    const auto it = std::find(categories.begin(), categories.end(), name);
    if (it == categories.end())
      fail(ErrorCode::kVocabulary, "unknown category '" + std::string(name) + "'", "category");
    return static_cast<int>(it - categories.begin());
  }

  void validate() const {
    require(num_bins >= 2, ErrorCode::kInvalidInput, "schema: num_bins must be >= 2");
    require(!categories.empty(), ErrorCode::kInvalidInput, "schema: categories must be non-empty");
    require(max_elements >= 1, ErrorCode::kInvalidInput, "schema: max_elements must be >= 1");
    require(attributes.size() == kNumAttrs, ErrorCode::kInvalidInput,
            "schema: attributes must list category, x, y, w, h exactly once");
    std::array<bool, kNumAttrs> seen{};
    for (Attr a : attributes) {
      require(!seen[static_cast<std::size_t>(a)], ErrorCode::kInvalidInput,
              "schema: duplicate attribute '" + std::string(attr_name(a)) + "'");
      seen[static_cast<std::size_t>(a)] = true;
    }
  }

  bool operator==(const LayoutSchema&) const = default;
};

inline LayoutSchema default_schema(std::vector<std::string> categories, int max_elements = 25) {
  LayoutSchema s;
  s.categories = std::move(categories);
  s.max_elements = max_elements;
  s.validate();
  return s;
}

inline json schema_to_json(const LayoutSchema& s) {
  json attrs = json::array();
  json groups = json::object();
  for (Attr a : s.attributes) {
    attrs.push_back(attr_name(a));
    groups[std::string(attr_name(a))] = std::string(1, group_tag(s.group_of(a)));
  }
  return json{{"attributes", attrs},
              {"groups", groups},
              {"num_bins", s.num_bins},
              {"categories", s.categories},
              {"max_elements", s.max_elements}};
}

inline LayoutSchema schema_from_json(const json& j) {
  LayoutSchema s;
  try {
    if (j.contains("attributes")) {
      s.attributes.clear();
      for (const auto& a : j.at("attributes")) s.attributes.push_back(attr_from_name(a.get<std::string>()));
    }
    if (j.contains("groups")) {
      for (const auto& [name, tag] : j.at("groups").items()) {
        const auto t = tag.get<std::string>();
        require(t.size() == 1, ErrorCode::kInvalidInput, "schema: group tag must be one of C, S, P");
        s.groups[static_cast<std::size_t>(attr_from_name(name))] = group_from_tag(t[0]);
      }
    }
    s.num_bins = j.value("num_bins", 32);
    s.categories = j.at("categories").get<std::vector<std::string>>();
    s.max_elements = j.value("max_elements", 25);
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidInput, std::string("schema: ") + e.what());
  }
  s.validate();
  return s;
}

// Shared vocabulary: four specials, then categories, then one range of
// coordinate bins used by every coordinate attribute.
struct Vocab {
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kMask = 3;
  static constexpr int kCategoryBase = 4;

  int num_categories = 0;
  int num_bins = 0;

  Vocab() = default;
  explicit Vocab(const LayoutSchema& s)
      : num_categories(static_cast<int>(s.categories.size())), num_bins(s.num_bins) {}

  int coord_base() const { return kCategoryBase + num_categories; }
  int size() const { return coord_base() + num_bins; }

  int category_token(int category) const { return kCategoryBase + category; }
  int coord_token(int bin) const { return coord_base() + bin; }

  bool is_special(int id) const { return id >= 0 && id < kCategoryBase; }
  bool is_category(int id) const { return id >= kCategoryBase && id < coord_base(); }
  bool is_coord(int id) const { return id >= coord_base() && id < size(); }

  // Half-open legal token range for a slot holding `a`.
  std::pair<int, int> legal_range(Attr a) const {
    if (a == Attr::kCategory) return {kCategoryBase, coord_base()};
    return {coord_base(), size()};
  }

  // Attribute value (category index or bin) carried by a token in slot `a`.
  int value_of(Attr a, int id) const {
    return a == Attr::kCategory ? id - kCategoryBase : id - coord_base();
  }
  int token_of(Attr a, int value) const {
    return a == Attr::kCategory ? category_token(value) : coord_token(value);
  }
};

inline int quantize(double v, int num_bins) {
  require(num_bins >= 2, ErrorCode::kInvalidInput, "quantize: num_bins must be >= 2");
  require(std::isfinite(v), ErrorCode::kInvalidInput, "quantize: value is not finite");
  const double scaled = std::floor(v * num_bins);
  return static_cast<int>(std::clamp(scaled, 0.0, static_cast<double>(num_bins - 1)));
}

inline double dequantize(int bin, int num_bins) {
  require(num_bins >= 2, ErrorCode::kInvalidInput, "dequantize: num_bins must be >= 2");
  require(bin >= 0 && bin < num_bins, ErrorCode::kInvalidInput,
          "dequantize: bin " + std::to_string(bin) + " outside [0, " + std::to_string(num_bins) + ")");
  return (bin + 0.5) / num_bins;
}

// One layout element. Coordinates are normalized box center (x, y) and size
// (w, h); `bins` holds their quantized values in (x, y, w, h) order.
struct Element {
  int category = 0;
  double x = 0, y = 0, w = 0, h = 0;
  std::optional<std::array<int, 4>> bins;

  double coord(Attr a) const {
    switch (a) {
      case Attr::kX: return x;
      case Attr::kY: return y;
      case Attr::kW: return w;
      case Attr::kH: return h;
      default: return static_cast<double>(category);
    }
  }
  void set_coord(Attr a, double v) {
    switch (a) {
      case Attr::kX: x = v; break;
      case Attr::kY: y = v; break;
      case Attr::kW: w = v; break;
      case Attr::kH: h = v; break;
      default: break;
    }
  }
  int bin(Attr a) const { return (*bins)[static_cast<std::size_t>(coord_index(a))]; }

  bool operator==(const Element&) const = default;
};

struct Layout {
  double canvas_w = 1.0;
  double canvas_h = 1.0;
  std::vector<Element> elements;

  bool operator==(const Layout&) const = default;
};

inline void validate_layout(const Layout& layout, const LayoutSchema& schema) {
  require(!layout.elements.empty(), ErrorCode::kCapacity, "layout has no elements");
  require(static_cast<int>(layout.elements.size()) <= schema.max_elements, ErrorCode::kCapacity,
          "layout has " + std::to_string(layout.elements.size()) + " elements, max is " +
              std::to_string(schema.max_elements));
  require(layout.canvas_w > 0 && layout.canvas_h > 0, ErrorCode::kInvalidInput,
          "canvas dimensions must be positive");
  const int ncat = static_cast<int>(schema.categories.size());
  for (const auto& e : layout.elements) {
    require(e.category >= 0 && e.category < ncat, ErrorCode::kVocabulary,
            "category index " + std::to_string(e.category) + " not in schema");
    if (e.bins) {
      for (int b : *e.bins)
        require(b >= 0 && b < schema.num_bins, ErrorCode::kInvalidInput,
                "bin " + std::to_string(b) + " out of range");
    }
  }
}

// Fills in quantized bins from normalized coordinates (clamping into [0,1]).
inline Layout quantize_layout(Layout layout, int num_bins) {
  for (auto& e : layout.elements) {
    std::array<int, 4> b{};
    for (Attr a : kCoordAttrs) {
      const double v = std::clamp(e.coord(a), 0.0, 1.0);
      e.set_coord(a, v);
      b[static_cast<std::size_t>(coord_index(a))] = quantize(v, num_bins);
    }
    e.bins = b;
  }
  return layout;
}

enum class SlotKind : std::uint8_t { kBos, kEos, kPad, kAttr };
enum class SlotStatus : std::uint8_t { kLocked, kUnknown, kCommitted };

struct Slot {
  SlotKind kind = SlotKind::kPad;
  int element = -1;
  Attr attr = Attr::kCategory;
  Group group = Group::kCategory;
  SlotStatus status = SlotStatus::kLocked;

  bool operator==(const Slot&) const = default;
};

// Flattened [bos, c1, x1, y1, w1, h1, ..., eos, pad...] sequence, padded to
// the schema's maximum length, with per-position metadata.
struct TokenSequence {
  std::vector<int> ids;
  std::vector<Slot> slots;
  int num_elements = 0;

  int padded_length() const { return static_cast<int>(ids.size()); }
  int attrs_per_element() const {
    return num_elements == 0 ? 0 : (content_length() - 2) / num_elements;
  }
  // Length before padding: 2 + A * K.
  int content_length() const {
    int n = 0;
    for (const auto& s : slots) n += s.kind != SlotKind::kPad;
    return n;
  }
  std::vector<int> attr_positions() const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(slots.size()); ++i)
      if (slots[i].kind == SlotKind::kAttr) out.push_back(i);
    return out;
  }
  std::vector<int> positions_in_group(Group g) const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(slots.size()); ++i)
      if (slots[i].kind == SlotKind::kAttr && slots[i].group == g) out.push_back(i);
    return out;
  }
  std::vector<int> unknown_positions() const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(slots.size()); ++i)
      if (slots[i].kind == SlotKind::kAttr && slots[i].status == SlotStatus::kUnknown) out.push_back(i);
    return out;
  }
  // Non-PAD flags, the attention validity row for this sequence.
  std::vector<std::uint8_t> validity() const {
    std::vector<std::uint8_t> v(slots.size());
    for (std::size_t i = 0; i < slots.size(); ++i) v[i] = slots[i].kind != SlotKind::kPad;
    return v;
  }

  bool operator==(const TokenSequence&) const = default;
};

// A partially specified element. Missing values are unknown and will be
// generated; present values are locked. Coordinates are bin indices.
struct PartialElement {
  std::optional<int> category;
  std::array<std::optional<int>, 4> bins{};

  std::optional<int> value(Attr a) const {
    return a == Attr::kCategory ? category : bins[static_cast<std::size_t>(coord_index(a))];
  }
  void set(Attr a, std::optional<int> v) {
    if (a == Attr::kCategory)
      category = v;
    else
      bins[static_cast<std::size_t>(coord_index(a))] = v;
  }
};

namespace detail {

inline TokenSequence build_sequence(std::span<const PartialElement> elements,
                                    const LayoutSchema& schema) {
  schema.validate();
  const int k = static_cast<int>(elements.size());
  require(k >= 1, ErrorCode::kCapacity, "sequence needs at least one element");
  require(k <= schema.max_elements, ErrorCode::kCapacity,
          std::to_string(k) + " elements exceed max_elements=" + std::to_string(schema.max_elements));
  const Vocab vocab(schema);
  const int ncat = static_cast<int>(schema.categories.size());
  TokenSequence seq;
  seq.num_elements = k;
  const auto len = static_cast<std::size_t>(schema.max_seq_len());
  seq.ids.assign(len, Vocab::kPad);
  seq.slots.assign(len, Slot{});
  seq.ids[0] = Vocab::kBos;
  seq.slots[0].kind = SlotKind::kBos;
  std::size_t pos = 1;
  for (int e = 0; e < k; ++e) {
    for (Attr a : schema.attributes) {
      Slot& slot = seq.slots[pos];
      slot.kind = SlotKind::kAttr;
      slot.element = e;
      slot.attr = a;
      slot.group = schema.group_of(a);
      const auto v = elements[static_cast<std::size_t>(e)].value(a);
      if (v) {
        const int limit = a == Attr::kCategory ? ncat : schema.num_bins;
        if (*v < 0 || *v >= limit)
          fail(a == Attr::kCategory ? ErrorCode::kVocabulary : ErrorCode::kInvalidInput,
               "element " + std::to_string(e) + " " + std::string(attr_name(a)) + " value " +
                   std::to_string(*v) + " outside [0, " + std::to_string(limit) + ")",
               "elements[" + std::to_string(e) + "]." + std::string(attr_name(a)));
        slot.status = SlotStatus::kLocked;
        seq.ids[pos] = vocab.token_of(a, *v);
      } else {
        slot.status = SlotStatus::kUnknown;
        seq.ids[pos] = Vocab::kMask;
      }
      ++pos;
    }
  }
  seq.ids[pos] = Vocab::kEos;
  seq.slots[pos].kind = SlotKind::kEos;
  return seq;
}

}  // namespace detail

inline PartialElement to_partial(const Element& e, int num_bins) {
  PartialElement p;
  p.category = e.category;
  for (Attr a : kCoordAttrs) {
    p.set(a, e.bins ? e.bin(a) : quantize(e.coord(a), num_bins));
  }
  return p;
}

inline TokenSequence tokenize(const Layout& layout, const LayoutSchema& schema) {
  validate_layout(layout, schema);
  std::vector<PartialElement> parts;
  parts.reserve(layout.elements.size());
  for (const auto& e : layout.elements) parts.push_back(to_partial(e, schema.num_bins));
  return detail::build_sequence(parts, schema);
}

inline TokenSequence make_conditional_input(std::span<const PartialElement> elements,
                                            const LayoutSchema& schema) {
  return detail::build_sequence(elements, schema);
}

inline Layout detokenize(const TokenSequence& seq, const LayoutSchema& schema,
                         double canvas_w = 1.0, double canvas_h = 1.0) {
  const Vocab vocab(schema);
  Layout out;
  out.canvas_w = canvas_w;
  out.canvas_h = canvas_h;
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    const Slot& slot = seq.slots[i];
    if (slot.kind != SlotKind::kAttr) continue;
    const int id = seq.ids[i];
    if (id == Vocab::kMask)
      fail(ErrorCode::kIncompleteSequence, "position " + std::to_string(i) + " is still masked");
    const auto [lo, hi] = vocab.legal_range(slot.attr);
    if (id < lo || id >= hi)
      fail(ErrorCode::kDecode, "token " + std::to_string(id) + " at position " + std::to_string(i) +
                                   " is not a legal " + std::string(attr_name(slot.attr)) + " token");
    const auto e = static_cast<std::size_t>(slot.element);
    if (out.elements.size() <= e) out.elements.resize(e + 1, Element{0, 0, 0, 0, 0, std::array<int, 4>{}});
    Element& el = out.elements[e];
    const int value = vocab.value_of(slot.attr, id);
    if (slot.attr == Attr::kCategory) {
      el.category = value;
    } else {
      (*el.bins)[static_cast<std::size_t>(coord_index(slot.attr))] = value;
      el.set_coord(slot.attr, dequantize(value, schema.num_bins));
    }
  }
  return out;
}

// Layout JSON: {"canvas": {"w", "h"}, "elements": [{"category", "x", "y",
// "w", "h"}], "coords": "normalized" | "absolute"}. Absolute coordinates are
// divided by the canvas size; everything is clamped into [0,1] and quantized.
inline Layout layout_from_json(const json& j, const LayoutSchema& schema) {
  Layout layout;
  try {
    if (j.contains("canvas")) {
      layout.canvas_w = j.at("canvas").at("w").get<double>();
      layout.canvas_h = j.at("canvas").at("h").get<double>();
    }
    const std::string coords = j.value("coords", std::string("normalized"));
    require(coords == "normalized" || coords == "absolute", ErrorCode::kInvalidInput,
            "coords must be 'normalized' or 'absolute'");
    require(layout.canvas_w > 0 && layout.canvas_h > 0, ErrorCode::kInvalidInput,
            "canvas dimensions must be positive");
    const bool absolute = coords == "absolute";
    for (const auto& je : j.at("elements")) {
      Element e;
      e.category = schema.category_index(je.at("category").get<std::string>());
      e.x = je.at("x").get<double>();
      e.y = je.at("y").get<double>();
      e.w = je.at("w").get<double>();
      e.h = je.at("h").get<double>();
      if (absolute) {
        e.x /= layout.canvas_w;
        e.w /= layout.canvas_w;
        e.y /= layout.canvas_h;
        e.h /= layout.canvas_h;
      }
      for (Attr a : kCoordAttrs)
        require(std::isfinite(e.coord(a)), ErrorCode::kInvalidInput, "non-finite coordinate");
      layout.elements.push_back(e);
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidInput, std::string("layout json: ") + e.what());
  }
  layout = quantize_layout(std::move(layout), schema.num_bins);
  validate_layout(layout, schema);
  return layout;
}

inline json layout_to_json(const Layout& layout, const LayoutSchema& schema) {
  json elements = json::array();
  for (const auto& e : layout.elements) {
    elements.push_back(json{{"category", schema.categories.at(static_cast<std::size_t>(e.category))},
                            {"x", e.x},
                            {"y", e.y},
                            {"w", e.w},
                            {"h", e.h}});
  }
  return json{{"canvas", {{"w", layout.canvas_w}, {"h", layout.canvas_h}}},
              {"elements", elements},
              {"coords", "normalized"}};
}

}  // namespace lf
