#pragma once

#include "moka/sequence.hpp"
#include "moka/tape.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace moka {

// Post-softmax attention weights captured for offline inspection.
struct AttentionRecord {
  std::string query_modality;
  std::string key_modality;
  std::string attachment;  // which adapted linear produced it
  MatXd weights;           // N_q x N_k, row-stochastic
};

// Harness-owned collector. Forward passes record weights only when a sink
// is supplied; the hot path passes nullptr.
struct AttentionSink {
  std::vector<AttentionRecord> records;
};

namespace detail {

template <typename Scalar>
void record_weights(Tape<Scalar>& tape, Value w, AttentionSink* sink,
                    const std::string& query_mod, const std::string& key_mod,
                    const std::string& attachment) {
  if (!sink) return;
  sink->records.push_back(
      {query_mod, key_mod, attachment, tape.val(w).template cast<double>()});
}

}  // namespace detail

// softmax(Q K^T / sqrt(r)) V in rank space. Single head; the scale factor
// is exactly 1/sqrt(r). Attention over an empty key set is undefined.
template <typename Scalar>
Value scaled_attention(Tape<Scalar>& tape, Value queries, Value keys, Value values,
                       Index rank, AttentionSink* sink = nullptr,
                       const std::string& query_mod = {},
                       const std::string& key_mod = {},
                       const std::string& attachment = {}) {
  if (tape.val(keys).rows() == 0)
    throw ProtocolError("attention over empty key set (query modality '" +
                        query_mod + "')");
  const Scalar inv_sqrt_r =
      Scalar(1) / static_cast<Scalar>(std::sqrt(static_cast<double>(rank)));
  Value scores = tape.matmul(queries, tape.transpose(keys), inv_sqrt_r);
  Value w = tape.softmax_rows(scores);
  detail::record_weights(tape, w, sink, query_mod, key_mod, attachment);
  return tape.matmul(w, values);
}

// Non-text low-rank tokens query the text low-rank tokens; keys and values
// are both the text features, so no extra projections are involved.
template <typename Scalar>
Value task_centric_attention(Tape<Scalar>& tape, Value query_lr, Value text_lr,
                             Index rank, AttentionSink* sink = nullptr,
                             const std::string& query_mod = {},
                             const std::string& attachment = {}) {
  return scaled_attention(tape, query_lr, text_lr, text_lr, rank, sink,
                          query_mod, "text", attachment);
}

// uni_lr + lambda * att_out, booked as one fused residual.
template <typename Scalar>
Value residual_enhance(Tape<Scalar>& tape, Value uni_lr, Value att_out,
                       double lambda) {
  return tape.axpy(uni_lr, att_out, static_cast<Scalar>(lambda));
}

// Reversed direction: text tokens attend over the concatenated non-text
// low-rank tokens and are residually updated. Returns the attention output
// for the text rows; non-text rows are untouched by this variant.
template <typename Scalar>
Value reversed_query_attention(Tape<Scalar>& tape, Value text_lr,
                               const std::vector<Value>& nontext_lr,
                               Index rank, AttentionSink* sink = nullptr,
                               const std::string& key_desc = {},
                               const std::string& attachment = {}) {
  Value kv = nontext_lr.size() == 1 ? nontext_lr[0] : tape.concat_rows(nontext_lr);
  return scaled_attention(tape, text_lr, kv, kv, rank, sink, "text", key_desc,
                          attachment);
}

// Attention-free interaction: the mean text low-rank token, broadcast to
// every query row. Coincides with task-centric attention when all text
// tokens are equal.
template <typename Scalar>
Value naive_interaction_term(Tape<Scalar>& tape, Value text_lr, Index query_rows) {
  if (tape.val(text_lr).rows() == 0)
    throw ProtocolError("naive interaction with empty text span");
  Value mean = tape.mean_rows(text_lr);
  Value ones = tape.leaf(MatX<Scalar>::Ones(query_rows, 1));
  return tape.matmul(ones, mean);
}

template <typename Scalar>
Value naive_interaction(Tape<Scalar>& tape, Value uni_lr, Value text_lr,
                        double lambda) {
  Value term = naive_interaction_term<Scalar>(tape, text_lr, tape.val(uni_lr).rows());
  return residual_enhance(tape, uni_lr, term, lambda);
}

// Variant with learned rank-space projections: Wq per query modality,
// Wk/Wv shared for the text keys/values. The caller precomputes
// K = text_lr Wk^T and V = text_lr Wv^T once per layer.
template <typename Scalar>
Value projected_attention(Tape<Scalar>& tape, Value query_lr, Value wq,
                          Value keys, Value values, Index rank,
                          AttentionSink* sink = nullptr,
                          const std::string& query_mod = {},
                          const std::string& attachment = {}) {
  Value q = tape.matmul(query_lr, tape.transpose(wq));
  return scaled_attention(tape, q, keys, values, rank, sink, query_mod, "text",
                          attachment);
}

// Extra non-text/non-text attention term (e.g. audio querying visual),
// composed on top of the task-centric term.
template <typename Scalar>
Value extra_pair_attention(Tape<Scalar>& tape, Value query_lr, Value key_lr,
                           Index rank, AttentionSink* sink = nullptr,
                           const std::string& query_mod = {},
                           const std::string& key_mod = {},
                           const std::string& attachment = {}) {
  return scaled_attention(tape, query_lr, key_lr, key_lr, rank, sink, query_mod,
                          key_mod, attachment);
}

}  // namespace moka
