#include <catch2/catch_amalgamated.hpp>

#include "reassemble/metrics.hpp"

using namespace reassemble;
using namespace reassemble::metrics;

namespace {

Polygon unit_square_centered() {
    return {{-0.5, -0.5}, {0.5, -0.5}, {0.5, 0.5}, {-0.5, 0.5}};
}

AggregatedPose make_pose(double x, double y, double deg = 0.0) {
    RigidTransform2D t = RigidTransform2D::from_angle_deg(deg, {x, y});
    AggregatedPose p;
    p.translation = t.translation;
    p.rotation = t.rotation;
    return p;
}

EvalPuzzle two_squares(double separation = 2.0) {
    EvalPuzzle puzzle;
    puzzle.push_back({"a", unit_square_centered(), RigidTransform2D::from_angle_deg(0, {0, 0})});
    puzzle.push_back(
        {"b", unit_square_centered(), RigidTransform2D::from_angle_deg(0, {separation, 0})});
    return puzzle;
}

Solution ground_truth_solution(const EvalPuzzle& puzzle) {
    Solution sol;
    for (const auto& piece : puzzle) {
        AggregatedPose p;
        p.translation = piece.gt_pose.translation;
        p.rotation = piece.gt_pose.rotation;
        sol.poses.push_back({piece.id, p});
    }
    return sol;
}

}  // namespace

TEST_CASE("rmse translation printed-formula fixtures") {
    EvalPuzzle puzzle;
    puzzle.push_back({"a", unit_square_centered(), RigidTransform2D{}});

    Solution perfect = ground_truth_solution(puzzle);
    CHECK(rmse_translation(perfect, puzzle) == Catch::Approx(0.0).margin(1e-12));

    Solution off;
    off.poses.push_back({"a", make_pose(3, 4)});
    CHECK(rmse_translation(off, puzzle) == Catch::Approx(std::sqrt(5.0)).margin(1e-6));
    CHECK(rmse_translation(off, puzzle) == Catch::Approx(2.23607).margin(1e-5));
    CHECK(rmse_translation_conventional(off, puzzle) == Catch::Approx(5.0).margin(1e-9));

    EvalPuzzle two = two_squares();
    Solution partial;
    partial.poses.push_back({"a", make_pose(0, 5)});  // error norm 5
    partial.poses.push_back({"b", make_pose(2, 0)});  // exact
    CHECK(rmse_translation(partial, two) == Catch::Approx(std::sqrt(2.5)).margin(1e-6));
    CHECK(rmse_translation(partial, two) == Catch::Approx(1.58114).margin(1e-5));

    Solution missing;
    missing.poses.push_back({"a", make_pose(0, 0)});
    CHECK_THROWS_AS(rmse_translation(missing, two), PieceSetMismatch);
}

TEST_CASE("rmse rotation folds angles and matches the printed form") {
    EvalPuzzle puzzle;
    puzzle.push_back({"a", unit_square_centered(), RigidTransform2D{}});

    Solution perfect = ground_truth_solution(puzzle);
    CHECK(rmse_rotation(perfect, puzzle) == Catch::Approx(0.0).margin(1e-12));

    Solution ninety;
    ninety.poses.push_back({"a", make_pose(0, 0, 90)});
    CHECK(rmse_rotation(ninety, puzzle) == Catch::Approx(std::sqrt(90.0)).margin(1e-6));
    CHECK(rmse_rotation(ninety, puzzle) == Catch::Approx(9.48683).margin(1e-5));
    CHECK(rmse_rotation_conventional(ninety, puzzle) == Catch::Approx(90.0).margin(1e-9));

    // 350 vs 10 degrees folds to 20, never 340.
    EvalPuzzle rotated;
    rotated.push_back({"a", unit_square_centered(), RigidTransform2D::from_angle_deg(10, {0, 0})});
    Solution pred;
    pred.poses.push_back({"a", make_pose(0, 0, 350)});
    CHECK(rmse_rotation(pred, rotated) == Catch::Approx(std::sqrt(20.0)).margin(1e-6));
}

TEST_CASE("anchor alignment maps a single piece exactly") {
    EvalPuzzle puzzle;
    puzzle.push_back(
        {"a", unit_square_centered(), RigidTransform2D::from_angle_deg(25, {3, -1})});
    Solution anywhere;
    anywhere.poses.push_back({"a", make_pose(40, 12, 171)});

    Solution aligned = anchor_align(anywhere, puzzle);
    CHECK(aligned.poses[0].pose.translation.x == Catch::Approx(3.0).margin(1e-9));
    CHECK(aligned.poses[0].pose.translation.y == Catch::Approx(-1.0).margin(1e-9));

    MetricReport r = q_pos(anywhere, puzzle);
    CHECK(r.q_pos == Catch::Approx(1.0).margin(1e-3));
}

TEST_CASE("metrics are invariant to a global rigid motion of the solution") {
    EvalPuzzle puzzle = two_squares();
    Solution sol;
    sol.poses.push_back({"a", make_pose(0.1, -0.05, 4)});
    sol.poses.push_back({"b", make_pose(2.2, 0.1, -3)});

    MetricReport base = compute_metrics(sol, puzzle);

    RigidTransform2D g = RigidTransform2D::from_angle_deg(30, {11, -7});
    Solution moved;
    for (const auto& entry : sol.poses) {
        RigidTransform2D t = g.compose({entry.pose.translation, entry.pose.rotation});
        AggregatedPose p;
        p.translation = t.translation;
        p.rotation = t.rotation;
        moved.poses.push_back({entry.id, p});
    }
    MetricReport after = compute_metrics(moved, puzzle);
    CHECK(after.q_pos == Catch::Approx(base.q_pos).margin(1e-6));
    CHECK(after.rmse_translation_mm == Catch::Approx(base.rmse_translation_mm).margin(1e-6));
    CHECK(after.rmse_rotation_deg == Catch::Approx(base.rmse_rotation_deg).margin(1e-6));
}

TEST_CASE("equal-area anchor ties resolve to the lowest id") {
    EvalPuzzle puzzle = two_squares();
    // Both pieces have identical area; a global offset solution must be
    // aligned through piece "a".
    Solution offset;
    offset.poses.push_back({"a", make_pose(5, 5)});
    offset.poses.push_back({"b", make_pose(7.5, 5)});  // b also displaced relative to a

    Solution aligned = anchor_align(offset, puzzle);
    CHECK(aligned.poses[0].pose.translation.x == Catch::Approx(0.0).margin(1e-9));
    CHECK(aligned.poses[0].pose.translation.y == Catch::Approx(0.0).margin(1e-9));
    // "b" keeps its relative offset (2.5 instead of 2.0).
    CHECK(aligned.poses[1].pose.translation.x == Catch::Approx(2.5).margin(1e-9));
}

TEST_CASE("q_pos fixtures") {
    EvalPuzzle puzzle = two_squares();

    MetricReport perfect = q_pos(ground_truth_solution(puzzle), puzzle);
    CHECK(perfect.q_pos == Catch::Approx(1.0).margin(1e-3));

    // Anchor exact, second piece displaced beyond its diameter.
    Solution disjoint;
    disjoint.poses.push_back({"a", make_pose(0, 0)});
    disjoint.poses.push_back({"b", make_pose(10, 0)});
    MetricReport half = q_pos(disjoint, puzzle);
    CHECK(half.q_pos == Catch::Approx(0.5).margin(1e-3));

    // Second piece shifted by half a side: 0.5 * 1 + 0.5 * 0.5 = 0.75.
    Solution shifted;
    shifted.poses.push_back({"a", make_pose(0, 0)});
    shifted.poses.push_back({"b", make_pose(2.5, 0)});
    MetricReport q = q_pos(shifted, puzzle, 4.0);
    CHECK(q.q_pos == Catch::Approx(0.75).margin(0.02));
    MetricReport q16 = q_pos(shifted, puzzle, 16.0);  // 4x resolution oracle
    CHECK(q16.q_pos == Catch::Approx(0.75).margin(0.005));

    // Weights sum to one.
    double wsum = 0;
    for (double w : q.weights) wsum += w;
    CHECK(wsum == Catch::Approx(1.0).margin(1e-9));

    // Exact clipping backend agrees on these convex fixtures.
    MetricReport clipped = q_pos(shifted, puzzle, 4.0, AreaBackend::ConvexClip);
    CHECK(clipped.q_pos == Catch::Approx(0.75).margin(1e-9));
}

TEST_CASE("q_pos stays in [0, 1] and detects degenerate pieces") {
    EvalPuzzle puzzle = two_squares();
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        Solution sol;
        sol.poses.push_back(
            {"a", make_pose(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0, 360))});
        sol.poses.push_back(
            {"b", make_pose(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0, 360))});
        MetricReport r = q_pos(sol, puzzle);
        REQUIRE(r.q_pos >= 0.0);
        REQUIRE(r.q_pos <= 1.0);
    }

    EvalPuzzle degenerate;
    degenerate.push_back({"a", Polygon{{0, 0}, {1, 0}}, RigidTransform2D{}});
    Solution sol;
    sol.poses.push_back({"a", make_pose(0, 0)});
    CHECK_THROWS_AS(q_pos(sol, degenerate), DegeneratePiece);
}

TEST_CASE("rmse metrics are zero only at the exact solution") {
    EvalPuzzle puzzle = two_squares();
    Solution perfect = ground_truth_solution(puzzle);
    CHECK(rmse_translation(perfect, puzzle) == 0.0);
    CHECK(rmse_rotation(perfect, puzzle) == 0.0);

    Solution nudged = perfect;
    nudged.poses[1].pose.translation.x += 1e-3;
    CHECK(rmse_translation(nudged, puzzle) > 0.0);
}
