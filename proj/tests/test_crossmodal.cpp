#include "moka/crossmodal.hpp"
#include "moka/fd.hpp"
#include "moka/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace moka;

namespace {

MatXd randm(Index rows, Index cols, RngStream& rng, double scale = 1.0) {
  MatXd m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(-scale, scale);
  return m;
}

// Straight-line re-implementation, kept independent of the tape kernels.
MatXd attention_oracle(const MatXd& q, const MatXd& k, const MatXd& v, Index rank) {
  MatXd scores = q * k.transpose() / std::sqrt(static_cast<double>(rank));
  MatXd w(scores.rows(), scores.cols());
  for (Index i = 0; i < scores.rows(); ++i) {
    Eigen::ArrayXd e = (scores.row(i).array() - scores.row(i).maxCoeff()).exp();
    w.row(i) = (e / e.sum()).matrix().transpose();
  }
  return w * v;
}

}  // namespace

TEST_CASE("single text token dominates any query") {
  RngStream rng(1, 0);
  Tape<double> tape;
  MatXd t = randm(1, 4, rng);
  Value q = tape.leaf(randm(5, 4, rng, 3.0));
  Value tl = tape.leaf(t);
  MatXd out = tape.val(task_centric_attention(tape, q, tl, 4));
  for (Index i = 0; i < out.rows(); ++i)
    CHECK((out.row(i) - t.row(0)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("identical text tokens collapse to that token") {
  RngStream rng(2, 0);
  Tape<double> tape;
  MatXd row = randm(1, 3, rng);
  MatXd t = row.replicate(6, 1);
  MatXd out = tape.val(
      task_centric_attention(tape, tape.leaf(randm(4, 3, rng)), tape.leaf(t), 3));
  for (Index i = 0; i < out.rows(); ++i)
    CHECK((out.row(i) - row.row(0)).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("rank-1 scalar closed form") {
  Tape<double> tape;
  MatXd q(1, 1), keys(2, 1);
  q << 2.0;
  keys << 1.0, -1.0;
  MatXd out =
      tape.val(task_centric_attention(tape, tape.leaf(q), tape.leaf(keys), 1));
  const double w1 = std::exp(2.0) / (std::exp(2.0) + std::exp(-2.0));
  const double w2 = 1.0 - w1;
  CHECK(out(0, 0) == doctest::Approx(w1 * 1.0 + w2 * -1.0).epsilon(1e-12));
}

TEST_CASE("scale factor is exactly 1/sqrt(r)") {
  RngStream rng(3, 0);
  MatXd q = randm(3, 1, rng), t = randm(5, 1, rng);
  // at r=1 the scaled and unscaled scores coincide
  Tape<double> tape;
  MatXd scaled =
      tape.val(task_centric_attention(tape, tape.leaf(q), tape.leaf(t), 1));
  Tape<double> manual;
  Value raw = manual.matmul(manual.leaf(q), manual.transpose(manual.leaf(t)));
  MatXd unscaled =
      manual.val(manual.matmul(manual.softmax_rows(raw), manual.leaf(t)));
  CHECK((scaled - unscaled).cwiseAbs().maxCoeff() == 0.0);

  // at r=4 the scores are exactly halved
  MatXd q4 = randm(2, 4, rng), t4 = randm(3, 4, rng);
  Tape<double> t1, t2;
  MatXd a = t1.val(t1.matmul(t1.leaf(q4), t1.transpose(t1.leaf(t4)), 0.5));
  MatXd b = t2.val(t2.matmul(t2.leaf(q4), t2.transpose(t2.leaf(t4)),
                             1.0 / std::sqrt(4.0)));
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("attention weights are row-stochastic") {
  RngStream rng(4, 0);
  for (int trial = 0; trial < 25; ++trial) {
    Tape<double> tape;
    AttentionSink sink;
    task_centric_attention(tape, tape.leaf(randm(3, 4, rng, 5.0)),
                           tape.leaf(randm(6, 4, rng, 5.0)), 4, &sink, "audio",
                           "block0");
    REQUIRE(sink.records.size() == 1);
    const MatXd& w = sink.records[0].weights;
    for (Index i = 0; i < w.rows(); ++i) {
      CHECK(std::abs(w.row(i).sum() - 1.0) < 1e-6);
      CHECK(w.row(i).minCoeff() >= 0.0);
      CHECK(w.row(i).maxCoeff() <= 1.0);
    }
  }
}

TEST_CASE("key permutations leave the output unchanged") {
  RngStream rng(5, 0);
  MatXd q = randm(4, 3, rng), t = randm(7, 3, rng);
  Tape<double> tape;
  MatXd base = tape.val(task_centric_attention(tape, tape.leaf(q), tape.leaf(t), 3));
  std::vector<Index> perm(7);
  std::iota(perm.begin(), perm.end(), 0);
  for (int trial = 0; trial < 10; ++trial) {
    for (std::size_t i = perm.size(); i > 1; --i)
      std::swap(perm[i - 1], perm[static_cast<std::size_t>(
                                 rng.uniform_int(static_cast<int>(i)))]);
    MatXd tp(t.rows(), t.cols());
    for (Index i = 0; i < t.rows(); ++i)
      tp.row(i) = t.row(perm[static_cast<std::size_t>(i)]);
    Tape<double> tape2;
    MatXd out =
        tape2.val(task_centric_attention(tape2, tape2.leaf(q), tape2.leaf(tp), 3));
    CHECK((out - base).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("residual enhance") {
  RngStream rng(6, 0);
  MatXd uni = randm(4, 3, rng), att = randm(4, 3, rng);
  Tape<double> tape;
  Value u = tape.leaf(uni), a = tape.leaf(att);
  CHECK(tape.val(residual_enhance(tape, u, a, 0.0)) == uni);
  MatXd twice = tape.val(residual_enhance(tape, u, u, 1.0));
  CHECK((twice - 2.0 * uni).cwiseAbs().maxCoeff() == 0.0);
  MatXd half = tape.val(residual_enhance(tape, u, a, 0.5));
  CHECK((half - (uni + 0.5 * att)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("reversed query updates text only") {
  RngStream rng(7, 0);
  Tape<double> tape;
  MatXd t = randm(4, 2, rng);
  MatXd single = randm(1, 2, rng);
  Value tl = tape.leaf(t);
  Value att = reversed_query_attention(tape, tl, {tape.leaf(single)}, 2);
  // one key: every text row receives exactly that token
  for (Index i = 0; i < 4; ++i)
    CHECK((tape.val(att).row(i) - single.row(0)).cwiseAbs().maxCoeff() < 1e-14);
  MatXd updated = tape.val(residual_enhance(tape, tl, att, 1.0));
  CHECK((updated - (t + single.replicate(4, 1))).cwiseAbs().maxCoeff() < 1e-13);
  // lambda = 0 keeps text intact
  CHECK(tape.val(residual_enhance(tape, tl, att, 0.0)) == t);
}

TEST_CASE("reversed query concatenates all non-text keys") {
  RngStream rng(8, 0);
  MatXd t = randm(3, 2, rng), a = randm(2, 2, rng), v = randm(4, 2, rng);
  Tape<double> tape;
  Value out = reversed_query_attention(tape, tape.leaf(t),
                                       {tape.leaf(a), tape.leaf(v)}, 2);
  MatXd kv(6, 2);
  kv << a, v;
  CHECK((tape.val(out) - attention_oracle(t, kv, kv, 2)).cwiseAbs().maxCoeff() <
        1e-13);
}

TEST_CASE("naive interaction is mean-pooled text broadcast") {
  RngStream rng(9, 0);
  MatXd uni = randm(5, 3, rng), t = randm(4, 3, rng);
  Tape<double> tape;
  Value u = tape.leaf(uni);
  Value tl = tape.leaf(t);
  MatXd out = tape.val(naive_interaction(tape, u, tl, 0.7));
  MatXd mean = t.colwise().mean();
  CHECK((out - (uni + 0.7 * mean.replicate(5, 1))).cwiseAbs().maxCoeff() < 1e-13);

  CHECK(tape.val(naive_interaction(tape, u, tl, 0.0)) == uni);

  // identical text rows: naive coincides with task-centric attention
  MatXd same = t.row(1).replicate(6, 1);
  Tape<double> t2;
  Value u2 = t2.leaf(uni);
  MatXd byatt = t2.val(residual_enhance(
      t2, u2, task_centric_attention(t2, u2, t2.leaf(same), 3), 0.7));
  Tape<double> t3;
  MatXd bynaive = t3.val(naive_interaction(t3, t3.leaf(uni), t3.leaf(same), 0.7));
  CHECK((byatt - bynaive).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("projected attention") {
  RngStream rng(10, 0);
  const Index r = 3;
  MatXd q = randm(4, r, rng), t = randm(5, r, rng);

  SUBCASE("identity projections reduce to task-centric") {
    Tape<double> tape;
    Value tl = tape.leaf(t);
    Value keys = tape.matmul(tl, tape.transpose(tape.leaf(MatXd::Identity(r, r))));
    Value vals = tape.matmul(tl, tape.transpose(tape.leaf(MatXd::Identity(r, r))));
    MatXd projected = tape.val(projected_attention(
        tape, tape.leaf(q), tape.leaf(MatXd::Identity(r, r)), keys, vals, r));
    Tape<double> t2;
    MatXd plain =
        t2.val(task_centric_attention(t2, t2.leaf(q), t2.leaf(t), r));
    CHECK((projected - plain).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("zero value projection kills the output") {
    Tape<double> tape;
    Value tl = tape.leaf(t);
    Value keys = tape.matmul(tl, tape.transpose(tape.leaf(randm(r, r, rng))));
    Value vals = tape.matmul(tl, tape.transpose(tape.leaf(MatXd::Zero(r, r))));
    MatXd out = tape.val(projected_attention(
        tape, tape.leaf(q), tape.leaf(randm(r, r, rng)), keys, vals, r));
    CHECK(out.isZero(0.0));
  }

  SUBCASE("random projections match the oracle") {
    MatXd wq = randm(r, r, rng), wk = randm(r, r, rng), wv = randm(r, r, rng);
    Tape<double> tape;
    Value tl = tape.leaf(t);
    Value keys = tape.matmul(tl, tape.transpose(tape.leaf(wk)));
    Value vals = tape.matmul(tl, tape.transpose(tape.leaf(wv)));
    MatXd out = tape.val(
        projected_attention(tape, tape.leaf(q), tape.leaf(wq), keys, vals, r));
    MatXd expect = attention_oracle(q * wq.transpose(), t * wk.transpose(),
                                    t * wv.transpose(), r);
    CHECK((out - expect).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("extra pair attention matches the oracle") {
  RngStream rng(11, 0);
  MatXd q = randm(3, 2, rng), k = randm(4, 2, rng);
  Tape<double> tape;
  MatXd out =
      tape.val(extra_pair_attention(tape, tape.leaf(q), tape.leaf(k), 2));
  CHECK((out - attention_oracle(q, k, k, 2)).cwiseAbs().maxCoeff() < 1e-13);

  // one key token: every query row receives it
  MatXd one = randm(1, 2, rng);
  MatXd single =
      tape.val(extra_pair_attention(tape, tape.leaf(q), tape.leaf(one), 2));
  for (Index i = 0; i < 3; ++i)
    CHECK((single.row(i) - one.row(0)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("empty key sets are protocol errors") {
  Tape<double> tape;
  Value q = tape.leaf(MatXd::Ones(3, 2));
  Value empty = tape.leaf(MatXd::Zero(0, 2));
  CHECK_THROWS_AS(task_centric_attention(tape, q, empty, 2), ProtocolError);
  CHECK_THROWS_AS(naive_interaction(tape, q, empty, 1.0), ProtocolError);
}

TEST_CASE("attention gradients match the fd oracle") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    RngStream rng(seed, 40);
    std::vector<MatXd> params = {randm(3, 4, rng), randm(5, 4, rng),
                                 randm(4, 4, rng)};
    auto run = [](const std::vector<MatXd>& p, Tape<double>* keep,
                  std::vector<Value>* leaves) {
      Tape<double> local;
      Tape<double>& tape = keep ? *keep : local;
      Value q = tape.leaf(p[0]);
      Value t = tape.leaf(p[1]);
      Value wq = tape.leaf(p[2]);
      Value keys = tape.matmul(t, tape.transpose(wq));
      Value att = projected_attention(tape, q, wq, keys, t, 4);
      Value rev = reversed_query_attention(tape, t, {att}, 4);
      Value nv = naive_interaction(tape, att, t, 0.3);
      Value mix = tape.add(nv, tape.slice_rows(rev, 0, 3));
      Value pooled = tape.mean_rows(mix);
      Value loss = tape.matmul(pooled, tape.transpose(tape.mean_rows(att)));
      if (leaves) *leaves = {q, t, wq};
      return loss;
    };
    Tape<double> tape;
    std::vector<Value> leaves;
    Value loss = run(params, &tape, &leaves);
    auto grads = tape.backward(loss);
    auto f = [&](const std::vector<MatXd>& p) {
      Tape<double> t;
      return t.val(run(p, &t, nullptr))(0, 0);
    };
    auto fd = fd_gradient(f, params, 1e-5);
    for (std::size_t i = 0; i < params.size(); ++i)
      CHECK(max_rel_error(grads[static_cast<std::size_t>(leaves[i].id)], fd[i]) <
            1e-4);
  }
}
