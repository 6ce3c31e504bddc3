#pragma once

#include "moka/crossmodal.hpp"
#include "moka/rng.hpp"
#include "moka/sequence.hpp"
#include "moka/tape.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace moka {

enum class AdapterVariant {
  Lora,           // one shared (A, B) over all tokens
  MultipleLora,   // n full LoRA modules, each over all tokens, summed
  UnimodalLora,   // n LoRA modules, each routed to its own modality rows
  UniPlusMm,      // per-modality A with one uni B, plus a fully shared LoRA
  UniPlusMmGated, // same, with a per-token logistic gate mixing the branches
  Moka            // per-modality A, shared B, optional cross-modal term
};

enum class CrossMode { None, TaskCentric, ReversedQuery, Naive, Projected, ExtraPair };

inline const char* variant_name(AdapterVariant v) {
  switch (v) {
    case AdapterVariant::Lora: return "lora";
    case AdapterVariant::MultipleLora: return "multiple_lora";
    case AdapterVariant::UnimodalLora: return "unimodal_lora";
    case AdapterVariant::UniPlusMm: return "uni_plus_mm";
    case AdapterVariant::UniPlusMmGated: return "uni_plus_mm_gated";
    case AdapterVariant::Moka: return "moka";
  }
  return "?";
}

inline AdapterVariant parse_variant(const std::string& s) {
  for (AdapterVariant v :
       {AdapterVariant::Lora, AdapterVariant::MultipleLora, AdapterVariant::UnimodalLora,
        AdapterVariant::UniPlusMm, AdapterVariant::UniPlusMmGated, AdapterVariant::Moka})
    if (s == variant_name(v)) return v;
  throw ConfigError("unknown variant '" + s + "'");
}

inline const char* cross_mode_name(CrossMode m) {
  switch (m) {
    case CrossMode::None: return "none";
    case CrossMode::TaskCentric: return "task_centric";
    case CrossMode::ReversedQuery: return "reversed_query";
    case CrossMode::Naive: return "naive";
    case CrossMode::Projected: return "projected";
    case CrossMode::ExtraPair: return "extra_pair";
  }
  return "?";
}

inline CrossMode parse_cross_mode(const std::string& s) {
  for (CrossMode m :
       {CrossMode::None, CrossMode::TaskCentric, CrossMode::ReversedQuery,
        CrossMode::Naive, CrossMode::Projected, CrossMode::ExtraPair})
    if (s == cross_mode_name(m)) return m;
  throw ConfigError("unknown cross_mode '" + s + "'");
}

// Single source of truth for constructing any adapter in the zoo.
struct AdapterSpec {
  AdapterVariant variant = AdapterVariant::Moka;
  CrossMode cross_mode = CrossMode::TaskCentric;
  int rank = 4;
  std::map<std::string, double> lambdas;  // non-text modality -> strength
  double lambda_text = 1.0;               // reversed-query residual strength
  double lambda_extra = 1.0;              // extra non-text pair strength
  std::string extra_query;                // query modality for the extra pair
  std::uint64_t seed = 0;

  double lambda_for(const std::string& name) const {
    auto it = lambdas.find(name);
    return it == lambdas.end() ? 1.0 : it->second;
  }

  void validate(Index out_dim, Index in_dim, const SpanLayout& modalities) const {
    if (rank < 1) throw ConfigError("rank must be positive");
    if (rank > std::min(out_dim, in_dim) / 2)
      throw ConfigError("rank " + std::to_string(rank) + " too large for dims " +
                        shape_str(out_dim, in_dim) + " (need r <= min(d,k)/2)");
    if (cross_mode != CrossMode::None && variant != AdapterVariant::Moka)
      throw ConfigError(std::string("cross_mode '") + cross_mode_name(cross_mode) +
                        "' is only valid for the moka variant");
    for (const auto& [name, lam] : lambdas) {
      if (!modalities.has(name))
        throw ConfigError("lambda for unknown modality '" + name + "'");
      if (modalities.span(name).modality.is_text)
        throw ConfigError("lambda given for text modality '" + name + "'");
      if (lam < 0.0) throw ConfigError("lambda for '" + name + "' must be >= 0");
    }
    if (cross_mode == CrossMode::ExtraPair) {
      const auto nontext = modalities.non_text_names();
      if (nontext.size() < 2)
        throw ConfigError("extra_pair needs at least two non-text modalities");
      if (!extra_query.empty()) {
        if (!modalities.has(extra_query) ||
            modalities.span(extra_query).modality.is_text)
          throw ConfigError("extra_query '" + extra_query +
                            "' is not a non-text modality");
      }
    }
  }
};

// Ordered, named parameter container; the one owner of trainable matrices.
template <typename Scalar>
class ParamStore {
 public:
  MatX<Scalar>& add(const std::string& name, MatX<Scalar> m) {
    if (find(name) >= 0) throw ContractError("duplicate parameter '" + name + "'");
    items_.emplace_back(name, std::move(m));
    return items_.back().second;
  }

  bool has(const std::string& name) const { return find(name) >= 0; }

  MatX<Scalar>& at(const std::string& name) {
    const int i = find(name);
    if (i < 0) throw LookupError("no parameter '" + name + "'");
    return items_[static_cast<std::size_t>(i)].second;
  }

  const MatX<Scalar>& at(const std::string& name) const {
    return const_cast<ParamStore*>(this)->at(name);
  }

  const std::vector<std::pair<std::string, MatX<Scalar>>>& items() const {
    return items_;
  }
  std::vector<std::pair<std::string, MatX<Scalar>>>& items() { return items_; }

  std::size_t tensor_count() const { return items_.size(); }

  std::int64_t scalar_count() const {
    std::int64_t n = 0;
    for (const auto& [name, m] : items_) n += m.size();
    return n;
  }

  std::uint64_t byte_checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [name, m] : items_) {
      h = fnv1a64(name.data(), name.size(), h);
      h = fnv1a64(m.data(), sizeof(Scalar) * static_cast<std::size_t>(m.size()), h);
    }
    return h;
  }

 private:
  int find(const std::string& name) const {
    for (std::size_t i = 0; i < items_.size(); ++i)
      if (items_[i].first == name) return static_cast<int>(i);
    return -1;
  }

  std::vector<std::pair<std::string, MatX<Scalar>>> items_;
};

// Tape leaves for every parameter in a store, looked up by name.
template <typename Scalar>
struct LeafMap {
  std::vector<std::pair<std::string, Value>> items;

  Value at(const std::string& name) const {
    for (const auto& [n, v] : items)
      if (n == name) return v;
    throw LookupError("no leaf '" + name + "'");
  }
};

template <typename Scalar>
LeafMap<Scalar> make_leaves(Tape<Scalar>& tape, const ParamStore<Scalar>& store) {
  LeafMap<Scalar> lm;
  for (const auto& [name, m] : store.items())
    lm.items.emplace_back(name, tape.leaf(m));
  return lm;
}

// Number of low-rank A and B matrices a variant instantiates for n modalities.
inline std::pair<int, int> count_matrices(AdapterVariant v, int n) {
  switch (v) {
    case AdapterVariant::Lora: return {1, 1};
    case AdapterVariant::MultipleLora: return {n, n};
    case AdapterVariant::UnimodalLora: return {n, n};
    case AdapterVariant::UniPlusMm: return {n + 1, 2};
    case AdapterVariant::UniPlusMmGated: return {n + 1, 2};
    case AdapterVariant::Moka: return {n, 1};
  }
  return {0, 0};
}

// Trainable scalar count for one adapter instance.
inline std::int64_t param_count(const AdapterSpec& spec, Index d, Index k, int n) {
  const std::int64_t r = spec.rank;
  switch (spec.variant) {
    case AdapterVariant::Lora: return r * (d + k);
    case AdapterVariant::MultipleLora:
    case AdapterVariant::UnimodalLora: return n * r * (d + k);
    case AdapterVariant::UniPlusMm: return (n + 1) * r * k + 2 * r * d;
    case AdapterVariant::UniPlusMmGated:
      return (n + 1) * r * k + 2 * r * d + 2 * r + 1;
    case AdapterVariant::Moka: {
      std::int64_t base = d * r + n * r * k;
      if (spec.cross_mode == CrossMode::Projected)
        base += (n - 1) * r * r + 2 * r * r;
      return base;
    }
  }
  return 0;
}

// One adapter attached to one linear layer: maps an L x k token matrix to an
// additive L x d update. Parameters live in an external ParamStore under
// this adapter's name prefix.
template <typename Scalar>
class Adapter {
 public:
  using Mat = MatX<Scalar>;

  Adapter(AdapterSpec spec, Index out_dim, Index in_dim, SpanLayout modalities,
          std::string prefix)
      : spec_(std::move(spec)),
        d_(out_dim),
        k_(in_dim),
        modalities_(std::move(modalities)),
        prefix_(std::move(prefix)) {
    spec_.validate(d_, k_, modalities_);
    if (spec_.cross_mode == CrossMode::ExtraPair) {
      const auto nontext = modalities_.non_text_names();
      extra_query_ = spec_.extra_query.empty() ? nontext[0] : spec_.extra_query;
      for (const auto& name : nontext)
        if (name != extra_query_) {
          extra_key_ = name;
          break;
        }
    }
  }

  const AdapterSpec& spec() const { return spec_; }
  const std::string& prefix() const { return prefix_; }
  Index out_dim() const { return d_; }
  Index in_dim() const { return k_; }
  const std::string& extra_query_modality() const { return extra_query_; }
  const std::string& extra_key_modality() const { return extra_key_; }

  // Registers and initializes this adapter's parameters. A-type matrices are
  // Kaiming-uniform, B-type start at zero so the initial update is exactly
  // zero; each matrix draws from a stream derived from its own name, so
  // identically named parameters match across variants under one seed.
  void init_params(ParamStore<Scalar>& store, std::uint64_t master_seed) const {
    const Index r = spec_.rank;
    auto kaiming = [&](const std::string& name, Index rows, Index cols) {
      RngStream rng = named_stream(master_seed, name);
      store.add(name, kaiming_uniform<Scalar>(rows, cols, rng));
    };
    auto zeros = [&](const std::string& name, Index rows, Index cols) {
      store.add(name, Mat::Zero(rows, cols));
    };
    switch (spec_.variant) {
      case AdapterVariant::Lora:
        kaiming(prefix_ + "A", r, k_);
        zeros(prefix_ + "B", d_, r);
        break;
      case AdapterVariant::MultipleLora:
      case AdapterVariant::UnimodalLora:
        for (const auto& name : modalities_.names()) {
          kaiming(prefix_ + "A." + name, r, k_);
          zeros(prefix_ + "B." + name, d_, r);
        }
        break;
      case AdapterVariant::UniPlusMm:
      case AdapterVariant::UniPlusMmGated:
        for (const auto& name : modalities_.names())
          kaiming(prefix_ + "uni.A." + name, r, k_);
        zeros(prefix_ + "uni.B", d_, r);
        kaiming(prefix_ + "mm.A", r, k_);
        zeros(prefix_ + "mm.B", d_, r);
        if (spec_.variant == AdapterVariant::UniPlusMmGated) {
          zeros(prefix_ + "gate.w_uni", 1, r);
          zeros(prefix_ + "gate.w_mm", 1, r);
          zeros(prefix_ + "gate.b", 1, 1);
        }
        break;
      case AdapterVariant::Moka:
        for (const auto& name : modalities_.names())
          kaiming(prefix_ + "A." + name, r, k_);
        zeros(prefix_ + "B", d_, r);
        if (spec_.cross_mode == CrossMode::Projected) {
          for (const auto& name : modalities_.non_text_names())
            kaiming(prefix_ + "Wq." + name, r, r);
          kaiming(prefix_ + "Wk", r, r);
          kaiming(prefix_ + "Wv", r, r);
        }
        break;
    }
  }

  // The additive update Delta (L x d). With a routing mask, rows of
  // deselected modalities are zeroed; the frozen pathway is unaffected by
  // construction. Cross-modal modes require text on the adapter pathway.
  Value delta(Tape<Scalar>& tape, Value tokens, const SpanLayout& layout,
              const RoutingMask* mask, const LeafMap<Scalar>& lm,
              AttentionSink* sink = nullptr, const std::string& attachment = {}) const {
    check_layout(tape, tokens, layout);
    check_mask(layout, mask);
    Value out;
    switch (spec_.variant) {
      case AdapterVariant::Lora: {
        Value u = tape.matmul(tokens, tape.transpose(lm.at(prefix_ + "A")));
        out = tape.matmul(u, tape.transpose(lm.at(prefix_ + "B")));
        break;
      }
      case AdapterVariant::MultipleLora: {
        Value acc;
        for (const auto& name : layout.names()) {
          Value u = tape.matmul(tokens, tape.transpose(lm.at(prefix_ + "A." + name)));
          Value di = tape.matmul(u, tape.transpose(lm.at(prefix_ + "B." + name)));
          acc = acc.valid() ? tape.add(acc, di) : di;
        }
        out = acc;
        break;
      }
      case AdapterVariant::UnimodalLora: {
        std::vector<Value> parts;
        for (const auto& s : layout.spans()) {
          Value xi = tape.slice_rows(tokens, s.start, s.length);
          Value u = tape.matmul(
              xi, tape.transpose(lm.at(prefix_ + "A." + s.modality.name)));
          parts.push_back(tape.matmul(
              u, tape.transpose(lm.at(prefix_ + "B." + s.modality.name))));
        }
        out = tape.concat_rows(parts);
        break;
      }
      case AdapterVariant::UniPlusMm:
      case AdapterVariant::UniPlusMmGated: {
        std::vector<Value> uni_lr, uni_parts;
        Value b_uni_t = tape.transpose(lm.at(prefix_ + "uni.B"));
        for (const auto& s : layout.spans()) {
          Value xi = tape.slice_rows(tokens, s.start, s.length);
          Value u = tape.matmul(
              xi, tape.transpose(lm.at(prefix_ + "uni.A." + s.modality.name)));
          uni_lr.push_back(u);
          uni_parts.push_back(tape.matmul(u, b_uni_t));
        }
        Value d_uni = tape.concat_rows(uni_parts);
        Value u_mm = tape.matmul(tokens, tape.transpose(lm.at(prefix_ + "mm.A")));
        Value d_mm = tape.matmul(u_mm, tape.transpose(lm.at(prefix_ + "mm.B")));
        if (spec_.variant == AdapterVariant::UniPlusMm) {
          out = tape.add(d_uni, d_mm);
        } else {
          Value u_cat = tape.concat_rows(uni_lr);
          Value lin = tape.add(
              tape.matmul(u_cat, tape.transpose(lm.at(prefix_ + "gate.w_uni"))),
              tape.matmul(u_mm, tape.transpose(lm.at(prefix_ + "gate.w_mm"))));
          Value g = tape.sigmoid(tape.add_rowvec(lin, lm.at(prefix_ + "gate.b")));
          Value ones = tape.leaf(Mat::Ones(tape.val(tokens).rows(), 1));
          Value g_inv = tape.axpy(ones, g, Scalar(-1));
          out = tape.add(tape.scale_rows(d_uni, g), tape.scale_rows(d_mm, g_inv));
        }
        break;
      }
      case AdapterVariant::Moka: {
        RankFeatures rf = rank_features(tape, tokens, layout, lm);
        CrossTerms ct = cross_terms(tape, rf, layout, lm, sink, attachment);
        Value b_t = tape.transpose(lm.at(prefix_ + "B"));
        std::vector<Value> parts;
        for (std::size_t i = 0; i < layout.spans().size(); ++i) {
          Value enhanced = rf.u[i];
          if (ct.term[i].valid())
            enhanced = residual_enhance(tape, enhanced, ct.term[i], ct.weight[i]);
          if (ct.term2[i].valid())
            enhanced = residual_enhance(tape, enhanced, ct.term2[i], ct.weight2[i]);
          parts.push_back(tape.matmul(enhanced, b_t));
        }
        out = tape.concat_rows(parts);
        break;
      }
    }
    if (mask && !mask->all_pass()) out = tape.mask_rows(out, mask->row_flags(layout));
    return out;
  }

  // The update split per the forward decomposition: unimodal term plus
  // (for moka with a cross mode) the cross-modal term, whose rows at
  // unaffected positions are exact zeros. For cross-free variants the
  // second value is absent and the first equals delta().
  std::pair<Value, std::optional<Value>> delta_parts(
      Tape<Scalar>& tape, Value tokens, const SpanLayout& layout,
      const LeafMap<Scalar>& lm) const {
    if (spec_.variant != AdapterVariant::Moka || spec_.cross_mode == CrossMode::None)
      return {delta(tape, tokens, layout, nullptr, lm), std::nullopt};
    check_layout(tape, tokens, layout);
    RankFeatures rf = rank_features(tape, tokens, layout, lm);
    CrossTerms ct = cross_terms(tape, rf, layout, lm, nullptr, {});
    Value b_t = tape.transpose(lm.at(prefix_ + "B"));
    std::vector<Value> uni_parts, cross_parts;
    bool any_cross = false;
    for (std::size_t i = 0; i < layout.spans().size(); ++i) {
      uni_parts.push_back(tape.matmul(rf.u[i], b_t));
      const Index rows = layout.spans()[i].length;
      Value block;
      if (ct.term[i].valid()) {
        block = tape.scale(tape.matmul(ct.term[i], b_t),
                           static_cast<Scalar>(ct.weight[i]));
        if (ct.term2[i].valid())
          block = tape.axpy(block, tape.matmul(ct.term2[i], b_t),
                            static_cast<Scalar>(ct.weight2[i]));
        any_cross = true;
      } else {
        block = tape.leaf(Mat::Zero(rows, d_));
      }
      cross_parts.push_back(block);
    }
    Value uni = tape.concat_rows(uni_parts);
    if (!any_cross) return {uni, std::nullopt};
    return {uni, tape.concat_rows(cross_parts)};
  }

 private:
  struct RankFeatures {
    std::vector<Value> u;  // per span, N_i x r
    int text_idx = -1;
  };

  struct CrossTerms {
    std::vector<Value> term;     // per span; invalid when no term applies
    std::vector<double> weight;  // residual strength per span
    std::vector<Value> term2;    // extra-pair second term
    std::vector<double> weight2;
  };

  RankFeatures rank_features(Tape<Scalar>& tape, Value tokens,
                             const SpanLayout& layout,
                             const LeafMap<Scalar>& lm) const {
    RankFeatures rf;
    int i = 0;
    for (const auto& s : layout.spans()) {
      Value xi = tape.slice_rows(tokens, s.start, s.length);
      rf.u.push_back(
          tape.matmul(xi, tape.transpose(lm.at(prefix_ + "A." + s.modality.name))));
      if (s.modality.is_text) rf.text_idx = i;
      ++i;
    }
    return rf;
  }

  CrossTerms cross_terms(Tape<Scalar>& tape, const RankFeatures& rf,
                         const SpanLayout& layout, const LeafMap<Scalar>& lm,
                         AttentionSink* sink, const std::string& attachment) const {
    const std::size_t n = layout.spans().size();
    CrossTerms ct;
    ct.term.resize(n);
    ct.weight.assign(n, 0.0);
    ct.term2.resize(n);
    ct.weight2.assign(n, 0.0);
    if (spec_.cross_mode == CrossMode::None || n == 1) return ct;

    const Index r = spec_.rank;
    const Value u_text = rf.u[static_cast<std::size_t>(rf.text_idx)];

    switch (spec_.cross_mode) {
      case CrossMode::None:
        break;
      case CrossMode::TaskCentric:
      case CrossMode::ExtraPair:
        for (std::size_t i = 0; i < n; ++i) {
          const auto& mod = layout.spans()[i].modality;
          if (mod.is_text) continue;
          ct.term[i] = task_centric_attention(tape, rf.u[i], u_text, r, sink,
                                              mod.name, attachment);
          ct.weight[i] = spec_.lambda_for(mod.name);
        }
        if (spec_.cross_mode == CrossMode::ExtraPair) {
          const std::size_t qi = span_index(layout, extra_query_);
          const std::size_t ki = span_index(layout, extra_key_);
          ct.term2[qi] = extra_pair_attention(tape, rf.u[qi], rf.u[ki], r, sink,
                                              extra_query_, extra_key_, attachment);
          ct.weight2[qi] = spec_.lambda_extra;
        }
        break;
      case CrossMode::ReversedQuery: {
        std::vector<Value> nontext;
        std::string key_desc;
        for (std::size_t i = 0; i < n; ++i) {
          if (layout.spans()[i].modality.is_text) continue;
          nontext.push_back(rf.u[i]);
          if (!key_desc.empty()) key_desc += "+";
          key_desc += layout.spans()[i].modality.name;
        }
        ct.term[static_cast<std::size_t>(rf.text_idx)] = reversed_query_attention(
            tape, u_text, nontext, r, sink, key_desc, attachment);
        ct.weight[static_cast<std::size_t>(rf.text_idx)] = spec_.lambda_text;
        break;
      }
      case CrossMode::Naive: {
        if (tape.val(u_text).rows() == 0)
          throw ProtocolError("naive interaction with empty text span");
        Value mean = tape.mean_rows(u_text);
        for (std::size_t i = 0; i < n; ++i) {
          const auto& mod = layout.spans()[i].modality;
          if (mod.is_text) continue;
          Value ones = tape.leaf(Mat::Ones(layout.spans()[i].length, 1));
          ct.term[i] = tape.matmul(ones, mean);
          ct.weight[i] = spec_.lambda_for(mod.name);
        }
        break;
      }
      case CrossMode::Projected: {
        Value keys = tape.matmul(u_text, tape.transpose(lm.at(prefix_ + "Wk")));
        Value vals = tape.matmul(u_text, tape.transpose(lm.at(prefix_ + "Wv")));
        for (std::size_t i = 0; i < n; ++i) {
          const auto& mod = layout.spans()[i].modality;
          if (mod.is_text) continue;
          ct.term[i] = projected_attention(tape, rf.u[i],
                                           lm.at(prefix_ + "Wq." + mod.name), keys,
                                           vals, r, sink, mod.name, attachment);
          ct.weight[i] = spec_.lambda_for(mod.name);
        }
        break;
      }
    }
    return ct;
  }

  static std::size_t span_index(const SpanLayout& layout, const std::string& name) {
    const auto& spans = layout.spans();
    for (std::size_t i = 0; i < spans.size(); ++i)
      if (spans[i].modality.name == name) return i;
    throw LookupError("unknown modality '" + name + "'");
  }

  void check_layout(Tape<Scalar>& tape, Value tokens, const SpanLayout& layout) const {
    const auto& m = tape.val(tokens);
    if (m.cols() != k_)
      throw ShapeError("adapter expects " + std::to_string(k_) +
                       " token columns, got " + std::to_string(m.cols()));
    if (m.rows() != layout.total_tokens())
      throw ShapeError("token rows " + std::to_string(m.rows()) +
                       " do not match layout (" +
                       std::to_string(layout.total_tokens()) + ")");
    for (const auto& name : modalities_.names())
      if (!layout.has(name))
        throw LookupError("sequence lacks modality '" + name + "'");
  }

  void check_mask(const SpanLayout& layout, const RoutingMask* mask) const {
    if (!mask) return;
    for (const auto& s : layout.spans()) mask->passes(s.modality.name);
    if (spec_.variant == AdapterVariant::Moka && spec_.cross_mode != CrossMode::None &&
        !mask->passes(layout.text_span().modality.name))
      throw ProtocolError(
          "cross-modal adaptation requires text on the adapter pathway; "
          "select text or evaluate the cross-attention-free variant");
  }

  AdapterSpec spec_;
  Index d_;
  Index k_;
  SpanLayout modalities_;
  std::string prefix_;
  std::string extra_query_;
  std::string extra_key_;
};

// Analytic forward cost of one adapter application, mirroring the booked
// tape costs op for op (multiply-add = 2, softmax = 5 per entry, fused
// residual = 1 per entry).
inline std::uint64_t flop_count(const AdapterSpec& spec, Index d, Index k,
                                const SpanLayout& layout) {
  const std::uint64_t L = static_cast<std::uint64_t>(layout.total_tokens());
  const std::uint64_t r = static_cast<std::uint64_t>(spec.rank);
  const std::uint64_t du = static_cast<std::uint64_t>(d);
  const std::uint64_t ku = static_cast<std::uint64_t>(k);
  const std::uint64_t base = 2 * L * r * (ku + du);
  const std::uint64_t n = layout.spans().size();
  const std::uint64_t nt =
      static_cast<std::uint64_t>(layout.text_span().length);

  auto attention_cost = [&](std::uint64_t nq, std::uint64_t nk) {
    return 2 * nq * nk * r   // scaled scores
           + 5 * nq * nk     // row softmax
           + 2 * nq * nk * r // weighted value sum
           + nq * r;         // fused residual
  };

  switch (spec.variant) {
    case AdapterVariant::Lora:
      return base;
    case AdapterVariant::UnimodalLora:
      return base;
    case AdapterVariant::MultipleLora:
      return n * base + (n - 1) * L * du;
    case AdapterVariant::UniPlusMm:
      return 2 * base + L * du;
    case AdapterVariant::UniPlusMmGated:
      // two branches + gate dots, bias, sigmoid, 1-g, two row scalings, mix
      return 2 * base + 4 * L * r + 7 * L + 3 * L * du;
    case AdapterVariant::Moka: {
      std::uint64_t total = base;
      if (spec.cross_mode == CrossMode::None || n == 1) return total;
      switch (spec.cross_mode) {
        case CrossMode::None:
          break;
        case CrossMode::TaskCentric:
        case CrossMode::ExtraPair:
          for (const auto& s : layout.spans())
            if (!s.modality.is_text)
              total += attention_cost(static_cast<std::uint64_t>(s.length), nt);
          if (spec.cross_mode == CrossMode::ExtraPair) {
            const auto nontext = layout.non_text_names();
            const std::string query =
                spec.extra_query.empty() ? nontext[0] : spec.extra_query;
            std::string key;
            for (const auto& name : nontext)
              if (name != query) {
                key = name;
                break;
              }
            total += attention_cost(
                static_cast<std::uint64_t>(layout.span(query).length),
                static_cast<std::uint64_t>(layout.span(key).length));
          }
          break;
        case CrossMode::ReversedQuery:
          total += attention_cost(nt, L - nt);
          break;
        case CrossMode::Naive:
          total += nt * r;  // shared mean over text rows
          for (const auto& s : layout.spans())
            if (!s.modality.is_text)
              total += 2 * static_cast<std::uint64_t>(s.length) * r   // broadcast
                       + static_cast<std::uint64_t>(s.length) * r;    // residual
          break;
        case CrossMode::Projected:
          total += 2 * (2 * nt * r * r);  // shared K and V projections
          for (const auto& s : layout.spans())
            if (!s.modality.is_text)
              total += 2 * static_cast<std::uint64_t>(s.length) * r * r +  // Wq
                       attention_cost(static_cast<std::uint64_t>(s.length), nt);
          break;
      }
      return total;
    }
  }
  return 0;
}

}  // namespace moka
