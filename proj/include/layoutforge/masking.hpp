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

// Training-time mask generators.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "layoutforge/error.hpp"
#include "layoutforge/layout.hpp"
#include "layoutforge/random.hpp"

namespace lf {

// Sequence positions to replace with the mask token. Always non-empty.
class MaskPlan {
 public:
  MaskPlan(std::vector<int> positions, std::optional<Group> group)
      : positions_(std::move(positions)), group_(group) {
    require(!positions_.empty(), ErrorCode::kContract, "mask plan must contain at least one position");
    std::sort(positions_.begin(), positions_.end());
    require(std::adjacent_find(positions_.begin(), positions_.end()) == positions_.end(), ErrorCode::kContract,
            "mask plan has duplicate positions");
  }

  const std::vector<int>& positions() const { return positions_; }
  // Selected group for hierarchical plans.
  std::optional<Group> group() const { return group_; }

 private:
  std::vector<int> positions_;
  std::optional<Group> group_;
};

// Picks a group uniformly among those with slots, then m ~ U{1..|slots(g)|},
// then m of the group's slots (across all elements) without replacement.
inline MaskPlan sample_hierarchical(const TokenSequence& seq, Rng& rng, std::optional<Group> forced = std::nullopt) {
  std::vector<Group> groups;
  for (Group g : kAllGroups)
    if (!seq.positions_in_group(g).empty()) groups.push_back(g);
  require(!groups.empty(), ErrorCode::kContract, "hierarchical masking: sequence has no attribute slots");
  Group g;
  if (forced) {
    require(std::find(groups.begin(), groups.end(), *forced) != groups.end(), ErrorCode::kContract,
            std::string("hierarchical masking: forced group ") + group_tag(*forced) + " has no slots");
    g = *forced;
  } else {
    g = groups[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(groups.size()) - 1))];
  }
  std::vector<int> slots = seq.positions_in_group(g);
  const int m = uniform_int(rng, 1, static_cast<int>(slots.size()));
  partial_shuffle(slots, static_cast<std::size_t>(m), rng);
  slots.resize(static_cast<std::size_t>(m));
  return MaskPlan(std::move(slots), g);
}

// ceil(ratio * #attribute slots) positions uniformly over all attribute slots.
inline MaskPlan sample_random_baseline(const TokenSequence& seq, Rng& rng, double ratio) {
  require(ratio > 0.0 && ratio < 1.0, ErrorCode::kInvalidInput, "random masking: ratio must be in (0,1)");
  std::vector<int> slots = seq.attr_positions();
  require(!slots.empty(), ErrorCode::kContract, "random masking: sequence has no attribute slots");
  // Tolerance keeps exact products such as 0.15 * 20 from rounding up.
  const auto count = static_cast<std::size_t>(
      std::max(1.0, std::ceil(ratio * static_cast<double>(slots.size()) - 1e-9)));
  partial_shuffle(slots, count, rng);
  slots.resize(count);
  return MaskPlan(std::move(slots), std::nullopt);
}

struct MaskingPolicy {
  enum class Kind { kHierarchical, kRandom } kind = Kind::kHierarchical;
  double ratio = 0.15;

  static MaskingPolicy hierarchical() { return {}; }
  static MaskingPolicy random(double ratio) { return {Kind::kRandom, ratio}; }

  // "hierarchical" or "random:<ratio>".
  static MaskingPolicy parse(std::string_view text) {
    if (text == "hierarchical") return hierarchical();
    if (text.rfind("random", 0) == 0) {
      double ratio = 0.15;
      if (text.size() > 6) {
        require(text[6] == ':', ErrorCode::kInvalidInput, "policy: expected random:<ratio>");
        try {
          ratio = std::stod(std::string(text.substr(7)));
        } catch (const std::exception&) {
          fail(ErrorCode::kInvalidInput, "policy: bad ratio in '" + std::string(text) + "'");
        }
      }
      require(ratio > 0.0 && ratio < 1.0, ErrorCode::kInvalidInput, "policy: ratio must be in (0,1)");
      return random(ratio);
    }
    fail(ErrorCode::kInvalidInput, "unknown masking policy '" + std::string(text) + "'");
  }

  std::string to_string() const {
    if (kind == Kind::kHierarchical) return "hierarchical";
    std::ostringstream os;
    os << "random:" << ratio;
    return os.str();
  }

  MaskPlan sample(const TokenSequence& seq, Rng& rng) const {
    return kind == Kind::kHierarchical ? sample_hierarchical(seq, rng) : sample_random_baseline(seq, rng, ratio);
  }

  bool operator==(const MaskingPolicy&) const = default;
};

struct MaskedSequence {
  TokenSequence sequence;
  std::map<int, int> targets;  // position -> original token id
};

inline MaskedSequence apply_mask(const TokenSequence& seq, const MaskPlan& plan) {
  MaskedSequence out{seq, {}};
  for (int pos : plan.positions()) {
    require(pos >= 0 && pos < seq.padded_length() &&
                seq.slots[static_cast<std::size_t>(pos)].kind == SlotKind::kAttr,
            ErrorCode::kContract, "apply_mask: position " + std::to_string(pos) + " is not an attribute slot");
    const auto p = static_cast<std::size_t>(pos);
    out.targets[pos] = seq.ids[p];
    out.sequence.ids[p] = Vocab::kMask;
    out.sequence.slots[p].status = SlotStatus::kUnknown;
  }
  return out;
}

// Inverse of apply_mask for a sequence whose masked slots were locked.
inline TokenSequence restore(const MaskedSequence& masked) {
  TokenSequence seq = masked.sequence;
  for (const auto& [pos, id] : masked.targets) {
    seq.ids[static_cast<std::size_t>(pos)] = id;
    seq.slots[static_cast<std::size_t>(pos)].status = SlotStatus::kLocked;
  }
  return seq;
}

}  // namespace lf
