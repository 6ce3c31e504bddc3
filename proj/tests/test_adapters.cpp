#include "moka/adapters.hpp"
#include "moka/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>

using namespace moka;

namespace {

SpanLayout avt(Index a = 2, Index v = 3, Index t = 4) {
  return SpanLayout::from_counts({{"audio", a}, {"visual", v}, {"text", t}}, "text");
}

AdapterSpec make_spec(AdapterVariant variant, CrossMode mode, int rank,
                      std::uint64_t seed) {
  AdapterSpec spec;
  spec.variant = variant;
  spec.cross_mode = mode;
  spec.rank = rank;
  spec.seed = seed;
  return spec;
}

struct Built {
  Adapter<double> adapter;
  ParamStore<double> store;
};

Built build(const AdapterSpec& spec, Index d, Index k, const SpanLayout& layout,
            bool randomize_b = false) {
  Built b{Adapter<double>(spec, d, k, layout, "ad."), {}};
  b.adapter.init_params(b.store, spec.seed);
  if (randomize_b) {
    RngStream rng(spec.seed, 777);
    for (auto& [name, m] : b.store.items())
      if (name.find(".B") != std::string::npos || name.find("gate") != std::string::npos)
        for (Index i = 0; i < m.rows(); ++i)
          for (Index j = 0; j < m.cols(); ++j) m(i, j) = rng.uniform(-0.8, 0.8);
  }
  return b;
}

MatXd run_delta(const Built& b, const MatXd& tokens, const SpanLayout& layout,
                const RoutingMask* mask = nullptr) {
  Tape<double> tape;
  auto lm = make_leaves(tape, b.store);
  Value t = tape.leaf(tokens);
  return tape.val(b.adapter.delta(tape, t, layout, mask, lm));
}

MatXd randm(Index rows, Index cols, std::uint64_t seed, double scale = 1.0) {
  RngStream rng(seed, 13);
  MatXd m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(-scale, scale);
  return m;
}

// Rank-space softmax attention written independently of the tape kernels.
MatXd oracle_attention(const MatXd& q, const MatXd& k, const MatXd& v, Index rank) {
  MatXd scores = q * k.transpose() / std::sqrt(static_cast<double>(rank));
  MatXd out(q.rows(), v.cols());
  for (Index i = 0; i < scores.rows(); ++i) {
    Eigen::ArrayXd e = (scores.row(i).array() - scores.row(i).maxCoeff()).exp();
    out.row(i) = (e / e.sum()).matrix().transpose() * v;
  }
  return out;
}

// Straight-line oracle for the full moka forward: slice, per-modality A,
// attention, residual, shared B, concatenate.
MatXd moka_oracle(const Built& b, const MatXd& tokens, const SpanLayout& layout) {
  const AdapterSpec& spec = b.adapter.spec();
  const MatXd& B = b.store.at("ad.B");
  std::vector<MatXd> u;
  MatXd u_text;
  for (const auto& s : layout.spans()) {
    MatXd ui = tokens.middleRows(s.start, s.length) *
               b.store.at("ad.A." + s.modality.name).transpose();
    if (s.modality.is_text) u_text = ui;
    u.push_back(ui);
  }
  MatXd out(tokens.rows(), B.rows());
  std::size_t i = 0;
  for (const auto& s : layout.spans()) {
    MatXd enhanced = u[i];
    if (spec.cross_mode == CrossMode::TaskCentric && !s.modality.is_text)
      enhanced += spec.lambda_for(s.modality.name) *
                  oracle_attention(u[i], u_text, u_text, spec.rank);
    out.middleRows(s.start, s.length) = enhanced * B.transpose();
    ++i;
  }
  return out;
}

}  // namespace

TEST_CASE("zero-init update is exactly zero for every variant") {
  const SpanLayout layout = avt();
  const MatXd tokens = randm(9, 6, 21);
  for (auto variant :
       {AdapterVariant::Lora, AdapterVariant::MultipleLora, AdapterVariant::UnimodalLora,
        AdapterVariant::UniPlusMm, AdapterVariant::UniPlusMmGated, AdapterVariant::Moka}) {
    for (auto mode : {CrossMode::None, CrossMode::TaskCentric, CrossMode::ReversedQuery,
                      CrossMode::Naive, CrossMode::Projected, CrossMode::ExtraPair}) {
      if (variant != AdapterVariant::Moka && mode != CrossMode::None) continue;
      auto b = build(make_spec(variant, mode, 3, 5), 7, 6, layout);
      MatXd delta = run_delta(b, tokens, layout);
      CHECK(delta.isZero(0.0));
    }
  }
}

TEST_CASE("lora hand example and linearity") {
  const SpanLayout layout = SpanLayout::from_counts({{"text", 1}}, "text");
  auto b = build(make_spec(AdapterVariant::Lora, CrossMode::None, 1, 1), 2, 2, layout);
  MatXd a(1, 2), bb(2, 1), x(1, 2);
  a << 1, 0;
  bb << 1, 0;
  x << 3, 5;
  b.store.at("ad.A") = a;
  b.store.at("ad.B") = bb;
  MatXd delta = run_delta(b, x, layout);
  CHECK(delta(0, 0) == 3.0);
  CHECK(delta(0, 1) == 0.0);

  b.store.at("ad.B") = 2.0 * bb;
  MatXd doubled = run_delta(b, x, layout);
  CHECK((doubled - 2.0 * delta).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("multiple lora sums full modules over all tokens") {
  const SpanLayout layout = avt();
  const MatXd tokens = randm(9, 5, 22);
  auto b = build(make_spec(AdapterVariant::MultipleLora, CrossMode::None, 2, 9), 6, 5,
                 layout, /*randomize_b=*/true);

  // dense oracle: sum_i B_i A_i applied to every token
  MatXd dw = MatXd::Zero(6, 5);
  for (const auto& name : layout.names())
    dw += b.store.at("ad.B." + name) * b.store.at("ad.A." + name);
  MatXd expect = tokens * dw.transpose();
  CHECK((run_delta(b, tokens, layout) - expect).cwiseAbs().maxCoeff() < 1e-10);

  // two identical modules double a single one
  const SpanLayout two = SpanLayout::from_counts({{"a", 3}, {"text", 2}}, "text");
  auto b2 = build(make_spec(AdapterVariant::MultipleLora, CrossMode::None, 2, 9), 6, 5,
                  two, true);
  b2.store.at("ad.A.text") = b2.store.at("ad.A.a");
  b2.store.at("ad.B.text") = b2.store.at("ad.B.a");
  auto single = build(make_spec(AdapterVariant::Lora, CrossMode::None, 2, 9), 6, 5, two,
                      true);
  single.store.at("ad.A") = b2.store.at("ad.A.a");
  single.store.at("ad.B") = b2.store.at("ad.B.a");
  const MatXd tokens2 = randm(5, 5, 23);
  MatXd d2 = run_delta(b2, tokens2, two);
  MatXd d1 = run_delta(single, tokens2, two);
  CHECK((d2 - 2.0 * d1).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("unimodal lora routes each modality through its own module") {
  const SpanLayout layout = avt();
  const MatXd tokens = randm(9, 5, 24);
  auto b = build(make_spec(AdapterVariant::UnimodalLora, CrossMode::None, 2, 11), 6, 5,
                 layout, true);

  // block-diagonal dense oracle per span
  MatXd expect(9, 6);
  for (const auto& s : layout.spans()) {
    MatXd dw = b.store.at("ad.B." + s.modality.name) *
               b.store.at("ad.A." + s.modality.name);
    expect.middleRows(s.start, s.length) =
        tokens.middleRows(s.start, s.length) * dw.transpose();
  }
  CHECK((run_delta(b, tokens, layout) - expect).cwiseAbs().maxCoeff() < 1e-10);

  // zeroing one modality's B zeroes exactly that span
  b.store.at("ad.B.visual").setZero();
  MatXd delta = run_delta(b, tokens, layout);
  CHECK(delta.middleRows(2, 3).isZero(0.0));
  CHECK(!delta.middleRows(0, 2).isZero(0.0));
  CHECK(!delta.middleRows(5, 4).isZero(0.0));

  // single-modality sequence reduces to plain lora
  const SpanLayout solo = SpanLayout::from_counts({{"text", 4}}, "text");
  auto routed = build(make_spec(AdapterVariant::UnimodalLora, CrossMode::None, 2, 12),
                      6, 5, solo, true);
  auto plain = build(make_spec(AdapterVariant::Lora, CrossMode::None, 2, 12), 6, 5,
                     solo, true);
  plain.store.at("ad.A") = routed.store.at("ad.A.text");
  plain.store.at("ad.B") = routed.store.at("ad.B.text");
  const MatXd tsolo = randm(4, 5, 25);
  CHECK(run_delta(routed, tsolo, solo) == run_delta(plain, tsolo, solo));
}

TEST_CASE("uni plus mm is the sum of its branches") {
  const SpanLayout layout = avt();
  const MatXd tokens = randm(9, 5, 26);
  auto b = build(make_spec(AdapterVariant::UniPlusMm, CrossMode::None, 2, 31), 6, 5,
                 layout, true);

  // branch oracles
  MatXd uni(9, 6);
  for (const auto& s : layout.spans()) {
    MatXd dw = b.store.at("ad.uni.B") * b.store.at("ad.uni.A." + s.modality.name);
    uni.middleRows(s.start, s.length) =
        tokens.middleRows(s.start, s.length) * dw.transpose();
  }
  MatXd mm = tokens * (b.store.at("ad.mm.B") * b.store.at("ad.mm.A")).transpose();
  CHECK((run_delta(b, tokens, layout) - (uni + mm)).cwiseAbs().maxCoeff() < 1e-10);

  // killing one branch leaves the other
  auto only_uni = build(make_spec(AdapterVariant::UniPlusMm, CrossMode::None, 2, 31),
                        6, 5, layout, true);
  only_uni.store.at("ad.mm.B").setZero();
  MatXd d = run_delta(only_uni, tokens, layout);
  MatXd uni2(9, 6);
  for (const auto& s : layout.spans()) {
    MatXd dw =
        only_uni.store.at("ad.uni.B") * only_uni.store.at("ad.uni.A." + s.modality.name);
    uni2.middleRows(s.start, s.length) =
        tokens.middleRows(s.start, s.length) * dw.transpose();
  }
  CHECK((d - uni2).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("gate at zero mixes the branches evenly") {
  const SpanLayout layout = avt();
  const MatXd tokens = randm(9, 5, 27);
  auto gated = build(make_spec(AdapterVariant::UniPlusMmGated, CrossMode::None, 2, 33),
                     6, 5, layout);
  RngStream rng(33, 778);
  for (auto& [name, m] : gated.store.items())
    if (name == "ad.uni.B" || name == "ad.mm.B")
      for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j) m(i, j) = rng.uniform(-0.8, 0.8);

  auto plain = build(make_spec(AdapterVariant::UniPlusMm, CrossMode::None, 2, 33), 6,
                     5, layout);
  for (auto& [name, m] : plain.store.items()) m = gated.store.at(name);

  // gate params are zero-initialized: g = 0.5 everywhere
  MatXd mixed = run_delta(gated, tokens, layout);
  MatXd summed = run_delta(plain, tokens, layout);
  CHECK((mixed - 0.5 * summed).cwiseAbs().maxCoeff() < 1e-12);

  // saturated gate returns the uni branch
  gated.store.at("ad.gate.b")(0, 0) = 60.0;
  auto only_uni = build(make_spec(AdapterVariant::UniPlusMm, CrossMode::None, 2, 33),
                        6, 5, layout);
  for (auto& [name, m] : only_uni.store.items()) m = gated.store.at(name);
  only_uni.store.at("ad.mm.B").setZero();
  MatXd uni_only = run_delta(only_uni, tokens, layout);
  CHECK((run_delta(gated, tokens, layout) - uni_only).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("moka matches the straight-line oracle") {
  const SpanLayout layout = avt(3, 2, 5);
  const MatXd tokens = randm(10, 6, 28);
  auto b = build(make_spec(AdapterVariant::Moka, CrossMode::TaskCentric, 3, 41), 7, 6,
                 layout, true);
  b.adapter.spec();
  MatXd delta = run_delta(b, tokens, layout);
  CHECK((delta - moka_oracle(b, tokens, layout)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("moka reduction laws") {
  SUBCASE("text-only sequence equals lora with the text matrices") {
    const SpanLayout solo = SpanLayout::from_counts({{"text", 5}}, "text");
    const MatXd tokens = randm(5, 6, 29);
    for (auto mode : {CrossMode::TaskCentric, CrossMode::ReversedQuery, CrossMode::Naive}) {
      auto spec = make_spec(AdapterVariant::Moka, mode, 2, 42);
      auto moka = build(spec, 7, 6, solo, true);
      auto lora = build(make_spec(AdapterVariant::Lora, CrossMode::None, 2, 42), 7, 6,
                        solo, true);
      lora.store.at("ad.A") = moka.store.at("ad.A.text");
      lora.store.at("ad.B") = moka.store.at("ad.B");
      CHECK(run_delta(moka, tokens, solo) == run_delta(lora, tokens, solo));
    }
  }

  SUBCASE("lambda = 0 equals the cross-attention-free variant exactly") {
    const SpanLayout layout = avt();
    const MatXd tokens = randm(9, 5, 30);
    auto with = make_spec(AdapterVariant::Moka, CrossMode::TaskCentric, 2, 43);
    with.lambdas = {{"audio", 0.0}, {"visual", 0.0}};
    auto on = build(with, 6, 5, layout, true);
    auto off = build(make_spec(AdapterVariant::Moka, CrossMode::None, 2, 43), 6, 5,
                     layout, true);
    MatXd a = run_delta(on, tokens, layout);
    MatXd bb = run_delta(off, tokens, layout);
    CHECK(a == bb);
  }

  SUBCASE("extra pair with lambda_extra = 0 reduces to task-centric") {
    const SpanLayout layout = avt();
    const MatXd tokens = randm(9, 5, 31);
    auto spec = make_spec(AdapterVariant::Moka, CrossMode::ExtraPair, 2, 44);
    spec.lambda_extra = 0.0;
    auto extra = build(spec, 6, 5, layout, true);
    auto plain = build(make_spec(AdapterVariant::Moka, CrossMode::TaskCentric, 2, 44),
                       6, 5, layout, true);
    MatXd a = run_delta(extra, tokens, layout);
    MatXd bb = run_delta(plain, tokens, layout);
    CHECK((a - bb).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("moka update is affine in lambda") {
  const SpanLayout layout = avt();
  const MatXd tokens = randm(9, 5, 32);
  auto at_lambda = [&](double lam) {
    auto spec = make_spec(AdapterVariant::Moka, CrossMode::TaskCentric, 2, 45);
    spec.lambdas = {{"audio", lam}, {"visual", lam}};
    auto b = build(spec, 6, 5, layout, true);
    return run_delta(b, tokens, layout);
  };
  const MatXd d0 = at_lambda(0.0);
  const MatXd d1 = at_lambda(0.35);
  const MatXd d2 = at_lambda(0.70);
  const MatXd lhs = d2 - d0;
  const MatXd rhs = 2.0 * (d1 - d0);
  const double scale = std::max(1.0, lhs.cwiseAbs().maxCoeff());
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() / scale < 1e-12);
}

TEST_CASE("cross-modal term is zero at unaffected positions") {
  const SpanLayout layout = avt();
  const MatXd tokens = randm(9, 5, 33);
  const auto& text = layout.text_span();
  for (auto mode : {CrossMode::TaskCentric, CrossMode::Naive, CrossMode::Projected,
                    CrossMode::ExtraPair}) {
    auto b = build(make_spec(AdapterVariant::Moka, mode, 2, 46), 6, 5, layout, true);
    Tape<double> tape;
    auto lm = make_leaves(tape, b.store);
    auto [uni, cross] = b.adapter.delta_parts(tape, tape.leaf(tokens), layout, lm);
    REQUIRE(cross.has_value());
    const MatXd& cm = tape.val(*cross);
    CHECK(cm.middleRows(text.start, text.length).isZero(0.0));
    CHECK(!cm.isZero(0.0));
    // parts recompose to the shipped forward within float tolerance
    MatXd sum = tape.val(uni) + cm;
    CHECK((sum - run_delta(b, tokens, layout)).cwiseAbs().maxCoeff() < 1e-12);
  }

  // reversed query swaps the zero block: text rows move, non-text stay
  auto rev = build(make_spec(AdapterVariant::Moka, CrossMode::ReversedQuery, 2, 47), 6,
                   5, layout, true);
  Tape<double> tape;
  auto lm = make_leaves(tape, rev.store);
  auto [uni, cross] = rev.adapter.delta_parts(tape, tape.leaf(tokens), layout, lm);
  REQUIRE(cross.has_value());
  const MatXd& cm = tape.val(*cross);
  CHECK(!cm.middleRows(text.start, text.length).isZero(0.0));
  CHECK(cm.middleRows(0, text.start).isZero(0.0));
}

TEST_CASE("routing masks gate only the update rows") {
  const SpanLayout layout = avt();
  const MatXd tokens = randm(9, 5, 34);
  auto b = build(make_spec(AdapterVariant::Moka, CrossMode::None, 2, 48), 6, 5, layout,
                 true);

  const RoutingMask all = full_mask(layout);
  MatXd unmasked = run_delta(b, tokens, layout);
  MatXd full = run_delta(b, tokens, layout, &all);
  CHECK(std::memcmp(unmasked.data(), full.data(),
                    sizeof(double) * static_cast<std::size_t>(full.size())) == 0);

  const RoutingMask vis = make_routing_mask({"visual"}, layout);
  MatXd visual_only = run_delta(b, tokens, layout, &vis);
  CHECK(visual_only.middleRows(0, 2).isZero(0.0));
  CHECK(!visual_only.middleRows(2, 3).isZero(0.0));
  CHECK(visual_only.middleRows(5, 4).isZero(0.0));
  CHECK(visual_only.middleRows(2, 3) == unmasked.middleRows(2, 3));

  const RoutingMask none = make_routing_mask({}, layout);
  CHECK(run_delta(b, tokens, layout, &none).isZero(0.0));

  // cross-modal modes refuse masks that drop text
  auto ca = build(make_spec(AdapterVariant::Moka, CrossMode::TaskCentric, 2, 48), 6, 5,
                  layout, true);
  CHECK_THROWS_AS(run_delta(ca, tokens, layout, &vis), ProtocolError);
  const RoutingMask with_text = make_routing_mask({"visual", "text"}, layout);
  CHECK_NOTHROW(run_delta(ca, tokens, layout, &with_text));
}

TEST_CASE("matrix counts match the published structure") {
  CHECK(count_matrices(AdapterVariant::Lora, 3) == std::pair<int, int>{1, 1});
  CHECK(count_matrices(AdapterVariant::MultipleLora, 3) == std::pair<int, int>{3, 3});
  CHECK(count_matrices(AdapterVariant::UnimodalLora, 3) == std::pair<int, int>{3, 3});
  CHECK(count_matrices(AdapterVariant::UniPlusMm, 3) == std::pair<int, int>{4, 2});
  CHECK(count_matrices(AdapterVariant::UniPlusMmGated, 3) == std::pair<int, int>{4, 2});
  CHECK(count_matrices(AdapterVariant::Moka, 3) == std::pair<int, int>{3, 1});
  CHECK(count_matrices(AdapterVariant::Lora, 7) == std::pair<int, int>{1, 1});
}

TEST_CASE("param counts match closed forms and tensor enumeration") {
  CHECK(param_count(make_spec(AdapterVariant::Lora, CrossMode::None, 2, 0), 8, 8, 3) ==
        32);
  CHECK(param_count(make_spec(AdapterVariant::Moka, CrossMode::None, 2, 0), 8, 8, 3) ==
        64);

  const SpanLayout layout = avt();
  for (auto variant :
       {AdapterVariant::Lora, AdapterVariant::MultipleLora, AdapterVariant::UnimodalLora,
        AdapterVariant::UniPlusMm, AdapterVariant::UniPlusMmGated, AdapterVariant::Moka}) {
    for (auto mode : {CrossMode::None, CrossMode::TaskCentric, CrossMode::ReversedQuery,
                      CrossMode::Naive, CrossMode::Projected, CrossMode::ExtraPair}) {
      if (variant != AdapterVariant::Moka && mode != CrossMode::None) continue;
      auto spec = make_spec(variant, mode, 3, 50);
      auto b = build(spec, 8, 7, layout);
      CHECK(b.store.scalar_count() == param_count(spec, 8, 7, 3));
      const auto [na, nb] = count_matrices(variant, 3);
      int a_count = 0, b_count = 0;
      for (const auto& [name, m] : b.store.items()) {
        if (name.find(".A") != std::string::npos) ++a_count;
        if (name.find(".B") != std::string::npos) ++b_count;
      }
      CHECK(a_count == na);
      CHECK(b_count == nb);
    }
  }
}

TEST_CASE("analytic flop counts match the instrumented tape") {
  // pinned instance from the cost model
  const SpanLayout ten = SpanLayout::from_counts({{"text", 10}}, "text");
  AdapterSpec lora = make_spec(AdapterVariant::Lora, CrossMode::None, 2, 0);
  CHECK(flop_count(lora, 8, 8, ten) == 640);

  const SpanLayout layout = avt(3, 2, 5);
  const MatXd tokens = randm(10, 6, 35);
  for (auto variant :
       {AdapterVariant::Lora, AdapterVariant::MultipleLora, AdapterVariant::UnimodalLora,
        AdapterVariant::UniPlusMm, AdapterVariant::UniPlusMmGated, AdapterVariant::Moka}) {
    for (auto mode : {CrossMode::None, CrossMode::TaskCentric, CrossMode::ReversedQuery,
                      CrossMode::Naive, CrossMode::Projected, CrossMode::ExtraPair}) {
      if (variant != AdapterVariant::Moka && mode != CrossMode::None) continue;
      auto spec = make_spec(variant, mode, 2, 51);
      auto b = build(spec, 7, 6, layout, true);
      Tape<double> tape;
      auto lm = make_leaves(tape, b.store);
      Value t = tape.leaf(tokens);
      b.adapter.delta(tape, t, layout, nullptr, lm);
      CHECK(tape.flops() == flop_count(spec, 7, 6, layout));
    }
  }

  // cross-attention overhead is strictly positive whenever text and
  // non-text tokens are both present
  AdapterSpec moka_ca = make_spec(AdapterVariant::Moka, CrossMode::TaskCentric, 2, 0);
  AdapterSpec moka_plain = make_spec(AdapterVariant::Moka, CrossMode::None, 2, 0);
  CHECK(flop_count(moka_ca, 7, 6, layout) > flop_count(moka_plain, 7, 6, layout));
}

TEST_CASE("spec validation") {
  const SpanLayout layout = avt();
  auto spec = make_spec(AdapterVariant::Lora, CrossMode::TaskCentric, 2, 0);
  CHECK_THROWS_AS(spec.validate(8, 8, layout), ConfigError);

  spec = make_spec(AdapterVariant::Moka, CrossMode::TaskCentric, 6, 0);
  CHECK_THROWS_AS(spec.validate(8, 8, layout), ConfigError);  // rank too large

  spec = make_spec(AdapterVariant::Moka, CrossMode::TaskCentric, 2, 0);
  spec.lambdas = {{"text", 1.0}};
  CHECK_THROWS_AS(spec.validate(8, 8, layout), ConfigError);
  spec.lambdas = {{"audio", -0.5}};
  CHECK_THROWS_AS(spec.validate(8, 8, layout), ConfigError);

  spec = make_spec(AdapterVariant::Moka, CrossMode::ExtraPair, 2, 0);
  const SpanLayout vt = SpanLayout::from_counts({{"visual", 3}, {"text", 4}}, "text");
  CHECK_THROWS_AS(spec.validate(8, 8, vt), ConfigError);
}
