#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "reassemble/diffusion.hpp"

using namespace reassemble;
using namespace reassemble::diffusion;

namespace {

Mat random_mat(Rng& rng, int r, int c, double scale = 1.0) {
    Mat m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = rng.uniform(-scale, scale);
    return m;
}

struct TokenFixture {
    Mat x0;
    Mat coords;
    Mat feats;
    std::vector<int> piece_index;
    int pieces;
};

TokenFixture make_fixture(Rng& rng, int pieces, int k, int feat_width) {
    TokenFixture f;
    f.pieces = pieces;
    const int n = pieces * k;
    f.coords = random_mat(rng, n, 2);
    f.feats = random_mat(rng, n, feat_width);
    f.x0.resize(n, 4);
    for (int m = 0; m < pieces; ++m) {
        double tx = rng.uniform(-0.5, 0.5), ty = rng.uniform(-0.5, 0.5);
        double th = rng.uniform(0, 2 * kPi);
        for (int i = 0; i < k; ++i) {
            int row = m * k + i;
            f.x0.row(row) << tx, ty, std::cos(th), std::sin(th);
            f.piece_index.push_back(m);
        }
    }
    return f;
}

}  // namespace

TEST_CASE("cosine schedule endpoints and monotonicity") {
    NoiseSchedule s = cosine_schedule(1000);
    CHECK(s.alpha_bar[0] > 0.99);
    CHECK(s.alpha_bar[999] < 0.01);
    for (int i = 1; i < 1000; ++i) {
        REQUIRE(s.alpha_bar[i] < s.alpha_bar[i - 1]);
        REQUIRE(s.beta[i] > 0.0);
        REQUIRE(s.beta[i] < 1.0);
    }

    NoiseSchedule s10 = cosine_schedule(10);
    for (int i = 1; i < 10; ++i) REQUIRE(s10.alpha_bar[i] < s10.alpha_bar[i - 1]);

    CHECK_THROWS_AS(cosine_schedule(1), BadT);
}

TEST_CASE("forward noise worked values") {
    NoiseSchedule s;
    s.T = 2;
    s.beta = Eigen::Vector2d(0.5, 0.5);
    s.alpha = Eigen::Vector2d(0.5, 0.5);
    s.alpha_bar = Eigen::Vector2d(1.0, 0.25);

    Mat x0 = Mat::Constant(1, 1, 1.0);
    Mat eps = Mat::Constant(1, 1, 2.0);

    // alpha_bar = 0.25: 0.5 * 1 + sqrt(0.75) * 2 = 2.2320508
    Mat xt = forward_noise(x0, 1, s, eps);
    CHECK(xt(0, 0) == Catch::Approx(2.2320508).margin(1e-6));

    // alpha_bar = 1 limit: x_t == x0.
    CHECK(forward_noise(x0, 0, s, eps)(0, 0) == Catch::Approx(1.0).margin(1e-12));

    // eps = 0: pure sqrt(alpha_bar) scaling.
    Mat zero = Mat::Zero(1, 1);
    CHECK(forward_noise(x0, 1, s, zero)(0, 0) == Catch::Approx(0.5).margin(1e-12));

    CHECK_THROWS_AS(forward_noise(x0, 2, s, eps), BadTimestep);
    CHECK_THROWS_AS(forward_noise(x0, 1, s, Mat::Zero(2, 1)), ShapeMismatch);
}

TEST_CASE("denoise step is exact at the last step") {
    NoiseSchedule s = cosine_schedule(100);
    Rng rng(5);
    Mat x0 = random_mat(rng, 6, 4);
    Mat eps = random_mat(rng, 6, 4);
    Mat x1 = forward_noise(x0, 0, s, eps);
    Mat rec = denoise_step(x1, x0, 0, s);
    CHECK((rec - x0).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("denoise step at alpha_bar ~ 1 rescales only") {
    NoiseSchedule s;
    s.T = 1;
    s.beta = Eigen::VectorXd::Constant(1, 1e-16);
    s.alpha = Eigen::VectorXd::Constant(1, 1.0);
    s.alpha_bar = Eigen::VectorXd::Constant(1, 1.0);
    Rng rng(6);
    Mat xt = random_mat(rng, 3, 4);
    Mat out = denoise_step(xt, xt, 0, s);
    CHECK((out - xt).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("oracle reverse chain recovers x0 for T in {100, 1000}") {
    for (int T : {100, 1000}) {
        NoiseSchedule s = cosine_schedule(T);
        Rng rng(7);
        Mat x0 = random_mat(rng, 8, 4);
        Mat eps = random_mat(rng, 8, 4);
        Mat x = forward_noise(x0, T - 1, s, eps);
        for (int t = T - 1; t >= 0; --t) x = denoise_step(x, x0, t, s);
        CHECK((x - x0).cwiseAbs().maxCoeff() < 1e-5);
    }
}

TEST_CASE("denoiser forward shape") {
    DenoiserConfig cfg;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.width = 16;
    cfg.t_embed_width = 8;
    Rng rng(9);
    TokenFixture f = make_fixture(rng, 3, 20, 6);
    DenoiserModel model(cfg, 6, 11);
    Mat out = model.predict(f.x0, f.coords, f.feats, 10, f.piece_index);
    CHECK(out.rows() == 60);
    CHECK(out.cols() == 4);
    CHECK(out.allFinite());
}

TEST_CASE("denoiser is piece-permutation equivariant") {
    DenoiserConfig cfg;
    cfg.layers = 4;
    cfg.heads = 2;
    cfg.width = 16;
    cfg.t_embed_width = 8;
    Rng rng(10);
    const int k = 5;
    TokenFixture f = make_fixture(rng, 3, k, 6);
    DenoiserModel model(cfg, 6, 12);

    Mat base = model.predict(f.x0, f.coords, f.feats, 3, f.piece_index);

    // Piece order B, C, A.
    std::vector<int> order{1, 2, 0};
    Mat x0p(15, 4), coordsp(15, 2), featsp(15, 6);
    std::vector<int> pidx;
    for (int m = 0; m < 3; ++m) {
        for (int i = 0; i < k; ++i) {
            int src = order[size_t(m)] * k + i;
            int dst = m * k + i;
            x0p.row(dst) = f.x0.row(src);
            coordsp.row(dst) = f.coords.row(src);
            featsp.row(dst) = f.feats.row(src);
            pidx.push_back(m);
        }
    }
    Mat permuted = model.predict(x0p, coordsp, featsp, 3, pidx);
    for (int m = 0; m < 3; ++m)
        for (int i = 0; i < k; ++i)
            CHECK((permuted.row(m * k + i) - base.row(order[size_t(m)] * k + i))
                      .cwiseAbs()
                      .maxCoeff() < 1e-9);
}

TEST_CASE("intra-only denoiser isolates pieces") {
    DenoiserConfig cfg;
    cfg.layers = 4;
    cfg.heads = 2;
    cfg.width = 16;
    cfg.t_embed_width = 8;
    cfg.inter_attention = false;
    Rng rng(13);
    TokenFixture f = make_fixture(rng, 2, 4, 6);
    DenoiserModel model(cfg, 6, 14);

    Mat base = model.predict(f.x0, f.coords, f.feats, 5, f.piece_index);

    // Mangle piece B's tokens; piece A outputs must not move.
    TokenFixture g = f;
    for (int r = 4; r < 8; ++r) {
        g.x0.row(r).setConstant(9.0);
        g.feats.row(r).setConstant(-3.0);
    }
    Mat out = model.predict(g.x0, g.coords, g.feats, 5, g.piece_index);
    CHECK((out.topRows(4) - base.topRows(4)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((out.bottomRows(4) - base.bottomRows(4)).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("intra-piece attention weights are exactly zero across pieces") {
    DenoiserConfig cfg;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.width = 16;
    cfg.t_embed_width = 8;
    Rng rng(15);
    TokenFixture f = make_fixture(rng, 2, 3, 6);
    DenoiserModel model(cfg, 6, 16);

    nn::Tape t(true);  // keep attention values alive for capture
    nn::ParamBinding bind;
    std::vector<Mat> attn;
    model.forward(t, bind, f.x0, f.coords, t.constant(f.feats), 2, f.piece_index, &attn);
    REQUIRE(attn.size() == size_t(cfg.layers * cfg.heads));

    // Layer 0 is intra-piece: block off-diagonals must be identically zero.
    for (int h = 0; h < cfg.heads; ++h) {
        const Mat& a = attn[size_t(h)];
        CHECK(a.block(0, 3, 3, 3).cwiseAbs().maxCoeff() == 0.0);
        CHECK(a.block(3, 0, 3, 3).cwiseAbs().maxCoeff() == 0.0);
        for (int r = 0; r < 6; ++r) CHECK(a.row(r).sum() == Catch::Approx(1.0).margin(1e-12));
    }
    // Layer 1 is inter-piece: cross-piece mass exists.
    double cross = 0;
    for (int h = 0; h < cfg.heads; ++h)
        cross += attn[size_t(cfg.heads + h)].block(0, 3, 3, 3).cwiseAbs().sum();
    CHECK(cross > 0.0);
}

TEST_CASE("training losses fixtures") {
    Mat gt(2, 4);
    gt << 0, 0, 1, 0, 0, 0, 1, 0;  // M=1, K=2, s=(0,0), r=(1,0)

    TrainLossReport zero = training_losses(gt, gt);
    CHECK(zero.total == Catch::Approx(0.0).margin(1e-15));

    Mat pred(2, 4);
    pred << 1, 0, 1, 0, 0, 1, 1, 0;  // errors (1,0) and (0,1), rotations exact
    TrainLossReport r = training_losses(pred, gt);
    CHECK(r.loss_translation == Catch::Approx(1.0).margin(1e-12));
    CHECK(r.loss_rotation == Catch::Approx(0.0).margin(1e-12));
    CHECK(r.total == Catch::Approx(1.0).margin(1e-12));

    // Duplicating every row leaves the means unchanged.
    Mat pred2(4, 4), gt2(4, 4);
    pred2 << pred, pred;
    gt2 << gt, gt;
    TrainLossReport dup = training_losses(pred2, gt2);
    CHECK(dup.loss_translation == Catch::Approx(r.loss_translation).margin(1e-12));
    CHECK(dup.loss_rotation == Catch::Approx(r.loss_rotation).margin(1e-12));

    CHECK_THROWS_AS(training_losses(pred, Mat::Zero(3, 4)), ShapeMismatch);
}

TEST_CASE("tape losses agree with the report") {
    Rng rng(17);
    Mat pred = random_mat(rng, 6, 4);
    Mat gt = random_mat(rng, 6, 4);
    nn::Tape t;
    TrainLossReport rep;
    Var loss = training_losses_tape(t, t.push(pred), gt, &rep);
    TrainLossReport direct = training_losses(pred, gt);
    CHECK(t.val(loss)(0, 0) == Catch::Approx(direct.total).margin(1e-12));
    CHECK(rep.loss_translation == Catch::Approx(direct.loss_translation).margin(1e-12));
}

TEST_CASE("aggregate pose fixtures") {
    Mat same(3, 4);
    same << 2, 3, 0, 1, 2, 3, 0, 1, 2, 3, 0, 1;
    AggregatedPose p = aggregate_pose(same);
    CHECK(p.translation.x == Catch::Approx(2.0).margin(1e-12));
    CHECK(p.translation.y == Catch::Approx(3.0).margin(1e-12));
    CHECK(p.rotation.x == Catch::Approx(0.0).margin(1e-12));
    CHECK(p.rotation.y == Catch::Approx(1.0).margin(1e-12));
    CHECK_FALSE(p.degenerate);

    Mat two(2, 4);
    two << 0, 0, 1, 0, 0, 0, 0, 1;  // rotations (1,0) and (0,1): mean at 45 deg
    AggregatedPose q = aggregate_pose(two);
    CHECK(q.rotation.x == Catch::Approx(0.70711).margin(1e-5));
    CHECK(q.rotation.y == Catch::Approx(0.70711).margin(1e-5));
    CHECK(std::hypot(q.rotation.x, q.rotation.y) == Catch::Approx(1.0).margin(1e-9));

    Mat anti(2, 4);
    anti << 0, 0, 1, 0, 0, 0, -1, 0;  // antipodal rotations cancel
    AggregatedPose d = aggregate_pose(anti);
    CHECK(d.degenerate);
    CHECK(d.rotation.x == 1.0);
    CHECK(d.rotation.y == 0.0);

    CHECK_THROWS_AS(aggregate_pose(Mat(0, 4)), EmptyPiece);
}

TEST_CASE("sampling is deterministic and oracle-exact") {
    NoiseSchedule s = cosine_schedule(100);
    Rng rng(19);
    TokenFixture f = make_fixture(rng, 3, 4, 5);
    DenoiserModel model;  // untrained: only usable through the override

    SampleOptions opts;
    opts.steps = 20;
    opts.seed = 77;
    opts.predictor_override = [&](const Mat&, int) { return f.x0; };

    Mat a = sample_chain(model, s, f.coords, f.feats, f.piece_index, f.pieces, opts);
    Mat b = sample_chain(model, s, f.coords, f.feats, f.piece_index, f.pieces, opts);
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);       // bit-identical reruns
    CHECK((a - f.x0).cwiseAbs().maxCoeff() < 1e-9);    // oracle lands on x0

    // Full-length chain exercises the per-step update path.
    opts.steps = 100;
    Mat c = sample_chain(model, s, f.coords, f.feats, f.piece_index, f.pieces, opts);
    CHECK((c - f.x0).cwiseAbs().maxCoeff() < 1e-5);

    // Unit rotations after aggregation for both step counts.
    for (const auto& pose : aggregate_by_piece(c, f.piece_index, f.pieces)) {
        if (!pose.degenerate)
            CHECK(std::hypot(pose.rotation.x, pose.rotation.y) == Catch::Approx(1.0).margin(1e-9));
    }

    CHECK_THROWS_AS(sample_chain(model, s, f.coords, f.feats, f.piece_index, f.pieces,
                                 SampleOptions{}),
                    UntrainedModel);
}

TEST_CASE("denoiser gradients match finite differences (sampled)") {
    DenoiserConfig cfg;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.width = 16;
    cfg.t_embed_width = 8;
    Rng rng(21);
    TokenFixture f = make_fixture(rng, 2, 3, 4);
    DenoiserModel model(cfg, 4, 31);
    NoiseSchedule s = cosine_schedule(50);
    Mat eps = random_mat(rng, 6, 4);
    Mat xt = forward_noise(f.x0, 20, s, eps);
    Mat gt = f.x0;

    auto eval = [&]() {
        nn::Tape t(false);
        nn::ParamBinding bind;
        Var out = model.forward(t, bind, xt, f.coords, t.constant(f.feats), 20, f.piece_index);
        return t.val(training_losses_tape(t, out, gt))(0, 0);
    };

    std::map<std::string, Mat> analytic;
    {
        nn::Tape t;
        nn::ParamBinding bind;
        Var out = model.forward(t, bind, xt, f.coords, t.constant(f.feats), 20, f.piece_index);
        Var loss = training_losses_tape(t, out, gt);
        t.backward(loss);
        for (auto& [p, v] : bind.entries)
            if (t.has_grad(v)) analytic[p->name] = t.grad(v);
    }

    Rng pick(3);
    int checked = 0, ok = 0;
    for (nn::Parameter* p : model.params().all()) {
        if (!analytic.count(p->name)) continue;
        const Mat& ag = analytic[p->name];
        for (int probe = 0; probe < 2; ++probe) {
            int r = pick.uniform_int(0, int(p->value.rows()) - 1);
            int c = pick.uniform_int(0, int(p->value.cols()) - 1);
            const double h = 1e-5;
            double saved = p->value(r, c);
            p->value(r, c) = saved + h;
            double lp = eval();
            p->value(r, c) = saved - h;
            double lm = eval();
            p->value(r, c) = saved;
            double fd = (lp - lm) / (2 * h);
            ++checked;
            if (std::abs(ag(r, c) - fd) <= 1e-4 * std::max({1.0, std::abs(fd), std::abs(ag(r, c))}))
                ++ok;
        }
    }
    REQUIRE(checked >= 30);
    CHECK(ok == checked);
}

TEST_CASE("denoiser checkpoint roundtrip") {
    DenoiserConfig cfg;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.width = 16;
    cfg.t_embed_width = 8;
    Rng rng(33);
    TokenFixture f = make_fixture(rng, 2, 3, 4);
    DenoiserModel model(cfg, 4, 41);
    model.mark_trained();
    Mat before = model.predict(f.x0, f.coords, f.feats, 7, f.piece_index);

    auto path = std::filesystem::temp_directory_path() / "denoiser_ckpt_test.bin";
    save_denoiser(path.string(), model, {{"note", "test"}});
    nn::json header;
    DenoiserModel loaded = load_denoiser(path.string(), &header);
    CHECK(header.at("note") == "test");
    CHECK(loaded.config() == cfg);
    Mat after = loaded.predict(f.x0, f.coords, f.feats, 7, f.piece_index);
    CHECK((before - after).cwiseAbs().maxCoeff() == 0.0);
    std::filesystem::remove(path);
}
