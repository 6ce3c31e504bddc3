#pragma once

#include "moka/common.hpp"

#include <algorithm>
#include <set>
#include <string>
#include <vector>

namespace moka {

struct ModalityId {
  std::string name;
  int index = 0;      // 0-based position in the span order
  bool is_text = false;
};

// Contiguous block of token positions belonging to one modality.
struct ModalitySpan {
  ModalityId modality;
  Index start = 0;
  Index length = 0;
};

// Ordered modality spans jointly covering [0, L). Exactly one modality is
// the text/task-description modality.
class SpanLayout {
 public:
  SpanLayout() = default;

  explicit SpanLayout(std::vector<ModalitySpan> spans) : spans_(std::move(spans)) {
    validate();
  }

  // Builds contiguous spans from (name, token count) pairs; `text_name`
  // marks the text modality.
  static SpanLayout from_counts(
      const std::vector<std::pair<std::string, Index>>& counts,
      const std::string& text_name) {
    std::vector<ModalitySpan> spans;
    Index at = 0;
    int idx = 0;
    for (const auto& [name, len] : counts) {
      spans.push_back({{name, idx, name == text_name}, at, len});
      at += len;
      ++idx;
    }
    return SpanLayout(std::move(spans));
  }

  const std::vector<ModalitySpan>& spans() const { return spans_; }

  Index total_tokens() const {
    Index n = 0;
    for (const auto& s : spans_) n += s.length;
    return n;
  }

  bool has(const std::string& name) const {
    return std::any_of(spans_.begin(), spans_.end(),
                       [&](const ModalitySpan& s) { return s.modality.name == name; });
  }

  const ModalitySpan& span(const std::string& name) const {
    for (const auto& s : spans_)
      if (s.modality.name == name) return s;
    throw LookupError("unknown modality '" + name + "'");
  }

  const ModalitySpan& text_span() const {
    for (const auto& s : spans_)
      if (s.modality.is_text) return s;
    throw LookupError("layout has no text modality");
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& s : spans_) out.push_back(s.modality.name);
    return out;
  }

  std::vector<std::string> non_text_names() const {
    std::vector<std::string> out;
    for (const auto& s : spans_)
      if (!s.modality.is_text) out.push_back(s.modality.name);
    return out;
  }

  bool operator==(const SpanLayout& other) const {
    if (spans_.size() != other.spans_.size()) return false;
    for (std::size_t i = 0; i < spans_.size(); ++i) {
      const auto& a = spans_[i];
      const auto& b = other.spans_[i];
      if (a.modality.name != b.modality.name || a.modality.is_text != b.modality.is_text ||
          a.start != b.start || a.length != b.length)
        return false;
    }
    return true;
  }

  // Re-checks the structural invariants: contiguity, ordering, coverage,
  // unique names, exactly one text modality.
  void validate() const {
    if (spans_.empty()) throw ContractError("layout has no spans");
    std::set<std::string> seen;
    Index at = 0;
    int text_count = 0;
    int idx = 0;
    for (const auto& s : spans_) {
      if (s.length < 0) throw ContractError("negative span length");
      if (s.start != at)
        throw ContractError("span '" + s.modality.name + "' starts at " +
                            std::to_string(s.start) + ", expected " + std::to_string(at));
      if (s.modality.index != idx)
        throw ContractError("span '" + s.modality.name + "' has ordinal " +
                            std::to_string(s.modality.index) + ", expected " +
                            std::to_string(idx));
      if (!seen.insert(s.modality.name).second)
        throw ContractError("duplicate modality '" + s.modality.name + "'");
      if (s.modality.is_text) ++text_count;
      at += s.length;
      ++idx;
    }
    if (text_count != 1)
      throw ContractError("layout must have exactly one text modality, got " +
                          std::to_string(text_count));
  }

 private:
  std::vector<ModalitySpan> spans_;
};

// Token matrix (one row per token embedding) plus its modality spans.
// Immutable after construction.
template <typename Scalar>
struct ModalitySequence {
  MatX<Scalar> tokens;
  SpanLayout layout;

  ModalitySequence() = default;
  ModalitySequence(MatX<Scalar> t, SpanLayout l)
      : tokens(std::move(t)), layout(std::move(l)) {
    if (tokens.rows() != layout.total_tokens())
      throw ShapeError("sequence has " + std::to_string(tokens.rows()) +
                       " token rows but spans cover " +
                       std::to_string(layout.total_tokens()));
  }
};

// Copy of one modality's token rows. Concatenating all slices in span order
// reconstructs the sequence exactly.
template <typename Scalar>
MatX<Scalar> slice_modality(const ModalitySequence<Scalar>& seq, const std::string& name) {
  const ModalitySpan& s = seq.layout.span(name);
  return seq.tokens.middleRows(s.start, s.length);
}

// Per-modality gate for partial-modality inference. Only the adapter
// pathway is gated; the frozen weights always see the full token sequence.
struct RoutingMask {
  std::vector<std::pair<std::string, bool>> pass;  // span order

  bool passes(const std::string& name) const {
    for (const auto& [n, p] : pass)
      if (n == name) return p;
    throw LookupError("routing mask has no entry for '" + name + "'");
  }

  bool all_pass() const {
    return std::all_of(pass.begin(), pass.end(),
                       [](const auto& e) { return e.second; });
  }

  bool none_pass() const {
    return std::none_of(pass.begin(), pass.end(),
                        [](const auto& e) { return e.second; });
  }

  // Per-token keep flags in span order.
  std::vector<char> row_flags(const SpanLayout& layout) const {
    std::vector<char> flags(static_cast<std::size_t>(layout.total_tokens()), 0);
    for (const auto& s : layout.spans()) {
      const char keep = passes(s.modality.name) ? 1 : 0;
      for (Index i = 0; i < s.length; ++i)
        flags[static_cast<std::size_t>(s.start + i)] = keep;
    }
    return flags;
  }
};

inline RoutingMask make_routing_mask(const std::set<std::string>& selected,
                                     const SpanLayout& layout) {
  for (const auto& name : selected)
    if (!layout.has(name))
      throw LookupError("selected modality '" + name + "' not in sequence");
  RoutingMask mask;
  for (const auto& s : layout.spans())
    mask.pass.emplace_back(s.modality.name, selected.count(s.modality.name) > 0);
  return mask;
}

inline RoutingMask full_mask(const SpanLayout& layout) {
  RoutingMask mask;
  for (const auto& s : layout.spans()) mask.pass.emplace_back(s.modality.name, true);
  return mask;
}

}  // namespace moka
