#pragma once

#include "moka/adapters.hpp"

#include <optional>
#include <string>
#include <vector>

namespace moka {

struct NetworkDims {
  Index embed_dim = 32;   // token embedding width (k)
  Index hidden_dim = 32;  // block output width (d)
  Index depth = 2;
  Index classes = 8;
  std::vector<int> attach_blocks;  // empty = adapter on every block
};

// Frozen stack of per-token linear maps with a smooth gated nonlinearity,
// one adapter per attached block, and a trainable classification head over
// mean-pooled final token states. The frozen path never mixes tokens, so
// any cross-modal information flow happens inside the adapters.
template <typename Scalar>
class ToyNetwork {
 public:
  using Mat = MatX<Scalar>;

  struct Leaves {
    LeafMap<Scalar> trainable;
    LeafMap<Scalar> frozen;
  };

  ToyNetwork(NetworkDims dims, AdapterSpec spec, SpanLayout modalities,
             std::uint64_t master_seed)
      : dims_(std::move(dims)), spec_(std::move(spec)), modalities_(std::move(modalities)) {
    if (dims_.depth < 1) throw ConfigError("network depth must be >= 1");
    if (dims_.depth > 1 && dims_.embed_dim != dims_.hidden_dim)
      throw ConfigError("stacked blocks need embed_dim == hidden_dim");
    for (int b : dims_.attach_blocks)
      if (b < 0 || b >= dims_.depth)
        throw ConfigError("attach block " + std::to_string(b) + " out of range");

    for (Index b = 0; b < dims_.depth; ++b) {
      const Index in = b == 0 ? dims_.embed_dim : dims_.hidden_dim;
      const std::string name = block_name(b) + ".W0";
      RngStream rng = named_stream(master_seed, name);
      frozen_.add(name, kaiming_uniform<Scalar>(dims_.hidden_dim, in, rng));
      if (attached(b)) {
        adapters_.emplace_back(
            Adapter<Scalar>(spec_, dims_.hidden_dim, in, modalities_, block_name(b) + "."));
        adapters_.back()->init_params(trainable_, master_seed);
      } else {
        adapters_.emplace_back(std::nullopt);
      }
    }
    RngStream head_rng = named_stream(master_seed, "head.W");
    trainable_.add("head.W",
                   kaiming_uniform<Scalar>(dims_.classes, dims_.hidden_dim, head_rng));
    trainable_.add("head.b", Mat::Zero(1, dims_.classes));
  }

  const NetworkDims& dims() const { return dims_; }
  const AdapterSpec& adapter_spec() const { return spec_; }
  const SpanLayout& modalities() const { return modalities_; }

  // Adapters plus head; frozen weights never appear here.
  ParamStore<Scalar>& trainable_parameters() { return trainable_; }
  const ParamStore<Scalar>& trainable_parameters() const { return trainable_; }
  const ParamStore<Scalar>& frozen_parameters() const { return frozen_; }

  std::uint64_t frozen_checksum() const { return frozen_.byte_checksum(); }

  // Restores all weights (frozen and trainable) from named tensors. Strict:
  // the set of names and every shape must match this network exactly.
  void load_tensors(const std::vector<std::pair<std::string, Mat>>& tensors) {
    if (tensors.size() != frozen_.tensor_count() + trainable_.tensor_count())
      throw CheckpointError("checkpoint has " + std::to_string(tensors.size()) +
                            " tensors, network expects " +
                            std::to_string(frozen_.tensor_count() +
                                           trainable_.tensor_count()));
    for (const auto& [name, m] : tensors) {
      ParamStore<Scalar>& store =
          trainable_.has(name) ? trainable_ : (frozen_.has(name) ? frozen_ : trainable_);
      if (!store.has(name))
        throw CheckpointError("unexpected tensor '" + name + "' in checkpoint");
      Mat& dst = store.at(name);
      if (dst.rows() != m.rows() || dst.cols() != m.cols())
        throw CheckpointError("tensor '" + name + "' is " +
                              shape_str(m.rows(), m.cols()) + ", expected " +
                              shape_str(dst.rows(), dst.cols()));
      dst = m;
    }
  }

  // Everything needed to reproduce this network's forward pass.
  std::vector<std::pair<std::string, Mat>> all_tensors() const {
    std::vector<std::pair<std::string, Mat>> out;
    for (const auto& item : frozen_.items()) out.push_back(item);
    for (const auto& item : trainable_.items()) out.push_back(item);
    return out;
  }

  int adapter_count() const {
    int n = 0;
    for (const auto& a : adapters_)
      if (a) ++n;
    return n;
  }

  const Adapter<Scalar>& adapter_at(Index block) const {
    if (block < 0 || block >= dims_.depth || !adapters_[static_cast<std::size_t>(block)])
      throw LookupError("no adapter at block " + std::to_string(block));
    return *adapters_[static_cast<std::size_t>(block)];
  }

  Leaves make_leaves(Tape<Scalar>& tape) const {
    return {moka::make_leaves<Scalar>(tape, trainable_),
            moka::make_leaves<Scalar>(tape, frozen_)};
  }

  // Logits (1 x classes). With a mask, only the adapter deltas are gated;
  // each frozen linear still sees its full per-token input.
  Value forward(Tape<Scalar>& tape, const Leaves& lv,
                const ModalitySequence<Scalar>& seq, const RoutingMask* mask,
                AttentionSink* sink = nullptr) const {
    return run(tape, lv, seq, mask, sink, /*use_adapters=*/true);
  }

  // The adapter-free pathway (frozen blocks + trainable head).
  Value forward_frozen(Tape<Scalar>& tape, const Leaves& lv,
                       const ModalitySequence<Scalar>& seq) const {
    return run(tape, lv, seq, nullptr, nullptr, /*use_adapters=*/false);
  }

  // Convenience single-shot inference.
  Mat logits(const ModalitySequence<Scalar>& seq, const RoutingMask* mask = nullptr,
             AttentionSink* sink = nullptr) const {
    Tape<Scalar> tape;
    Leaves lv = make_leaves(tape);
    return tape.val(forward(tape, lv, seq, mask, sink));
  }

  Mat logits_frozen(const ModalitySequence<Scalar>& seq) const {
    Tape<Scalar> tape;
    Leaves lv = make_leaves(tape);
    return tape.val(forward_frozen(tape, lv, seq));
  }

 private:
  static std::string block_name(Index b) { return "block" + std::to_string(b); }

  bool attached(Index b) const {
    if (dims_.attach_blocks.empty()) return true;
    for (int x : dims_.attach_blocks)
      if (x == b) return true;
    return false;
  }

  Value run(Tape<Scalar>& tape, const Leaves& lv, const ModalitySequence<Scalar>& seq,
            const RoutingMask* mask, AttentionSink* sink, bool use_adapters) const {
    if (seq.tokens.cols() != dims_.embed_dim)
      throw ShapeError("sequence embed dim " + std::to_string(seq.tokens.cols()) +
                       " does not match network (" + std::to_string(dims_.embed_dim) + ")");
    Value h = tape.leaf(seq.tokens);
    for (Index b = 0; b < dims_.depth; ++b) {
      Value lin = tape.matmul(h, tape.transpose(lv.frozen.at(block_name(b) + ".W0")));
      const auto& ad = adapters_[static_cast<std::size_t>(b)];
      if (use_adapters && ad) {
        Value d = ad->delta(tape, h, seq.layout, mask, lv.trainable, sink, block_name(b));
        lin = tape.add(lin, d);
      }
      h = tape.silu(lin);
    }
    Value pooled = tape.mean_rows(h);
    Value logits = tape.matmul(pooled, tape.transpose(lv.trainable.at("head.W")));
    return tape.add_rowvec(logits, lv.trainable.at("head.b"));
  }

  NetworkDims dims_;
  AdapterSpec spec_;
  SpanLayout modalities_;
  ParamStore<Scalar> frozen_;
  ParamStore<Scalar> trainable_;
  std::vector<std::optional<Adapter<Scalar>>> adapters_;
};

}  // namespace moka
