#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "reassemble/geometry.hpp"

using namespace reassemble;
using namespace reassemble::geometry;

namespace {

// Independent greedy max-min oracle: no distance caching, recomputes the
// min-distance of every unselected point each round.
std::vector<int> fps_oracle(const std::vector<Vec2>& pts, int k, int seed) {
    std::vector<int> sel{seed};
    while (int(sel.size()) < k) {
        int best = -1;
        double best_d = -1.0;
        for (int i = 0; i < int(pts.size()); ++i) {
            double dmin = std::numeric_limits<double>::max();
            for (int s : sel) dmin = std::min(dmin, (pts[i] - pts[s]).squared_norm());
            if (dmin > best_d) {
                best_d = dmin;
                best = i;
            }
        }
        sel.push_back(best);
    }
    std::sort(sel.begin(), sel.end());
    return sel;
}

Polygon make_circle(double radius, int n, Vec2 center = {0, 0}) {
    Polygon pts;
    for (int i = 0; i < n; ++i) {
        double a = 2.0 * kPi * i / n;
        pts.push_back({center.x + radius * std::cos(a), center.y + radius * std::sin(a)});
    }
    return pts;
}

// Star-shaped polygon: simple by construction.
Polygon random_simple_polygon(Rng& rng, int n, double scale) {
    std::vector<double> angles;
    for (int i = 0; i < n; ++i) angles.push_back(rng.uniform(0, 2 * kPi));
    std::sort(angles.begin(), angles.end());
    Polygon pts;
    for (double a : angles) {
        double r = rng.uniform(0.5, 1.0) * scale;
        pts.push_back({r * std::cos(a), r * std::sin(a)});
    }
    return pts;
}

BinaryMask filled_rect_mask(int w, int h, int x0, int y0, int x1, int y1) {
    BinaryMask m(w, h);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) m.at(x, y) = 1;
    return m;
}

}  // namespace

TEST_CASE("extract_contour traces the 10x10 square ring") {
    BinaryMask m = filled_rect_mask(10, 10, 0, 0, 9, 9);
    Contour c = extract_contour(m);
    REQUIRE(c.points.size() == 36);
    std::set<std::pair<int, int>> ring;
    for (const Vec2& p : c.points) {
        int x = int(p.x), y = int(p.y);
        bool on_edge = x == 0 || x == 9 || y == 0 || y == 9;
        REQUIRE(on_edge);
        ring.insert({x, y});
    }
    REQUIRE(ring.size() == 36);  // every boundary pixel exactly once
    REQUIRE(polygon_signed_area(c.points) > 0);
    for (size_t i = 0; i + 1 < c.points.size(); ++i)
        REQUIRE((c.points[i] - c.points[i + 1]).norm() > 0);
}

TEST_CASE("extract_contour rejects degenerate masks") {
    CHECK_THROWS_AS(extract_contour(BinaryMask(8, 8)), EmptyMask);

    BinaryMask single(8, 8);
    single.at(4, 4) = 1;
    CHECK_THROWS_AS(extract_contour(single), EmptyMask);

    BinaryMask two(12, 12);
    for (int y = 1; y <= 4; ++y)
        for (int x = 1; x <= 4; ++x) two.at(x, y) = 1;
    for (int y = 7; y <= 10; ++y)
        for (int x = 7; x <= 10; ++x) two.at(x, y) = 1;
    CHECK_THROWS_AS(extract_contour(two), MultipleComponents);
}

TEST_CASE("polygon area and perimeter fixtures") {
    Polygon square{{0, 0}, {1, 0}, {1, 1}, {0, 1}};
    CHECK(polygon_area(square) == Catch::Approx(1.0).epsilon(1e-12));
    CHECK(polygon_perimeter(square) == Catch::Approx(4.0).epsilon(1e-12));

    Polygon tri{{0, 0}, {4, 0}, {0, 3}};
    CHECK(polygon_area(tri) == Catch::Approx(6.0).epsilon(1e-12));
    CHECK(polygon_perimeter(tri) == Catch::Approx(12.0).epsilon(1e-12));

    Polygon collinear{{0, 0}, {1, 0}, {2, 0}};
    CHECK(polygon_area(collinear) == Catch::Approx(0.0).margin(1e-12));

    CHECK_THROWS_AS(polygon_area(Polygon{{0, 0}, {1, 1}}), TooFewPoints);
    CHECK_THROWS_AS(polygon_perimeter(Polygon{{0, 0}, {1, 1}}), TooFewPoints);
}

TEST_CASE("area/perimeter invariant under cyclic shift and rigid motion") {
    Rng rng(42);
    for (int trial = 0; trial < 20; ++trial) {
        Polygon poly = random_simple_polygon(rng, 12, 10.0);
        double area = polygon_area(poly);
        double per = polygon_perimeter(poly);

        Polygon shifted(poly.begin() + 5, poly.end());
        shifted.insert(shifted.end(), poly.begin(), poly.begin() + 5);
        CHECK(polygon_area(shifted) == Catch::Approx(area).epsilon(1e-9));

        RigidTransform2D t = RigidTransform2D::from_angle_deg(rng.uniform(0, 360),
                                                              {rng.uniform(-50, 50), rng.uniform(-50, 50)});
        Polygon moved = apply_transform(poly, t);
        CHECK(polygon_area(moved) == Catch::Approx(area).epsilon(1e-9));
        CHECK(polygon_perimeter(moved) == Catch::Approx(per).epsilon(1e-9));
    }
}

TEST_CASE("curvature of sampled circles equals 1/R") {
    for (double r : {5.0, 20.0, 100.0}) {
        Contour c;
        c.points = make_circle(r, 128);
        for (int idx : {0, 17, 64, 100}) {
            double k = curvature_at(c, idx, 4);
            CHECK(k == Catch::Approx(1.0 / r).epsilon(0.10));
        }
    }
}

TEST_CASE("curvature on straight runs is zero, corners dominate edges") {
    // Long thin rectangle sampled every pixel; middle of the long edge is a
    // straight window.
    Contour rect;
    for (int x = 0; x <= 40; ++x) rect.points.push_back({double(x), 0});
    for (int y = 1; y <= 4; ++y) rect.points.push_back({40, double(y)});
    for (int x = 39; x >= 0; --x) rect.points.push_back({double(x), 4});
    for (int y = 3; y >= 1; --y) rect.points.push_back({0, double(y)});
    CHECK(curvature_at(rect, 20, 4) == Catch::Approx(0.0).margin(1e-6));

    // Square with edge midpoints: corner curvature beats mid-edge curvature.
    Contour sq;
    sq.points = {{0, 0}, {0.5, 0}, {1, 0}, {1, 0.5}, {1, 1}, {0.5, 1}, {0, 1}, {0, 0.5}};
    double corner = curvature_at(sq, 2, 1);
    double mid = curvature_at(sq, 1, 1);
    CHECK(corner > 0.0);
    CHECK(corner > mid);
    // Circumradius of ((0.5,0),(1,0),(1,0.5)) is sqrt(2)/4, so kappa = 2*sqrt(2).
    CHECK(corner == Catch::Approx(2.0 * std::sqrt(2.0)).epsilon(1e-6));
}

TEST_CASE("edge angles from central differences") {
    Contour c;
    c.points = {{0, 0}, {1, 0}, {2, 0}, {2, 1}, {2, 2}, {1, 2}, {0, 2}, {0, 1}};
    CHECK(edge_angle_at(c, 1) == Catch::Approx(0.0).margin(1e-6));    // horizontal
    CHECK(edge_angle_at(c, 3) == Catch::Approx(90.0).margin(1e-6));   // ascending vertical
    CHECK(edge_angle_at(c, 5) == Catch::Approx(180.0).margin(1e-6));  // reverse horizontal

    Contour diag;
    diag.points = {{0, 0}, {1, 1}, {2, 2}, {3, 1}, {2, 0}};
    CHECK(edge_angle_at(diag, 1) == Catch::Approx(45.0).margin(1e-6));
}

TEST_CASE("farthest point sampling fixtures") {
    std::vector<Vec2> pts{{0, 0}, {10, 0}, {4, 0}};
    CHECK(farthest_point_sampling(pts, 2, 0) == std::vector<int>{0, 1});
    CHECK(farthest_point_sampling(pts, 3, 0) == std::vector<int>{0, 1, 2});
    CHECK(farthest_point_sampling(pts, 1, 2) == std::vector<int>{2});
    CHECK_THROWS_AS(farthest_point_sampling(pts, 4, 0), KTooLarge);
    CHECK_THROWS_AS(farthest_point_sampling(pts, 0, 0), KTooLarge);
}

TEST_CASE("farthest point sampling matches brute-force oracle") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        int n = rng.uniform_int(2, 64);
        std::vector<Vec2> pts;
        for (int i = 0; i < n; ++i) pts.push_back({rng.uniform(-10, 10), rng.uniform(-10, 10)});
        int k = rng.uniform_int(1, n);
        int seed = rng.uniform_int(0, n - 1);
        CHECK(farthest_point_sampling(pts, k, seed) == fps_oracle(pts, k, seed));
    }
}

TEST_CASE("apply_transform fixtures and distance preservation") {
    std::vector<Vec2> pts{{1, 0}};
    auto id = apply_transform(pts, RigidTransform2D::identity());
    CHECK(id[0].x == Catch::Approx(1.0).margin(1e-12));

    auto rot90 = apply_transform(pts, {{0, 0}, {0, 1}});
    CHECK(rot90[0].x == Catch::Approx(0.0).margin(1e-9));
    CHECK(rot90[0].y == Catch::Approx(1.0).margin(1e-9));

    auto moved = apply_transform(pts, {{3, 4}, {1, 0}});
    CHECK(moved[0].x == Catch::Approx(4.0).margin(1e-12));
    CHECK(moved[0].y == Catch::Approx(4.0).margin(1e-12));

    CHECK_THROWS_AS(apply_transform(pts, {{0, 0}, {1, 1}}), NonUnitRotation);

    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Vec2> cloud;
        for (int i = 0; i < 16; ++i) cloud.push_back({rng.uniform(-5, 5), rng.uniform(-5, 5)});
        RigidTransform2D t = RigidTransform2D::from_angle_deg(rng.uniform(0, 360),
                                                              {rng.uniform(-9, 9), rng.uniform(-9, 9)});
        auto out = apply_transform(cloud, t);
        for (size_t i = 0; i < cloud.size(); ++i)
            for (size_t j = i + 1; j < cloud.size(); ++j) {
                double before = (cloud[i] - cloud[j]).norm();
                double after = (out[i] - out[j]).norm();
                REQUIRE(after == Catch::Approx(before).epsilon(1e-9));
            }
    }
}

TEST_CASE("polygon intersection area fixtures") {
    Polygon square{{0, 0}, {1, 0}, {1, 1}, {0, 1}};
    CHECK(polygon_intersection_area(square, square, 4.0) == Catch::Approx(1.0).margin(0.02));

    Polygon offset{{0.5, 0}, {1.5, 0}, {1.5, 1}, {0.5, 1}};
    CHECK(polygon_intersection_area(square, offset, 4.0) == Catch::Approx(0.5).margin(0.02));

    Polygon tri{{0, 0}, {1, 0}, {0, 1}};
    double coarse = polygon_intersection_area(square, tri, 4.0);
    double fine = polygon_intersection_area(square, tri, 16.0);  // 4x resolution oracle
    CHECK(coarse == Catch::Approx(0.5).margin(0.02));
    CHECK(fine == Catch::Approx(0.5).margin(0.005));

    CHECK_THROWS_AS(polygon_intersection_area(Polygon{{0, 0}, {1, 0}}, square, 4.0),
                    DegeneratePolygon);
    Polygon flat{{0, 0}, {1, 0}, {2, 0}};
    CHECK_THROWS_AS(polygon_intersection_area(flat, square, 4.0), DegeneratePolygon);
}

TEST_CASE("self intersection equals area on random simple polygons") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        Polygon poly = random_simple_polygon(rng, rng.uniform_int(6, 20), rng.uniform(4.0, 12.0));
        double area = polygon_area(poly);
        double inter = polygon_intersection_area(poly, poly, 4.0);
        REQUIRE(inter == Catch::Approx(area).epsilon(0.02));
    }
}

TEST_CASE("raster backend agrees with convex clipping path") {
    Rng rng(23);
    Polygon square{{-2, -2}, {2, -2}, {2, 2}, {-2, 2}};
    for (int trial = 0; trial < 20; ++trial) {
        Polygon hexagon = make_circle(rng.uniform(1.5, 3.5), 6, {rng.uniform(-1, 1), rng.uniform(-1, 1)});
        double exact = polygon_intersection_area_convex(square, hexagon);
        double raster = polygon_intersection_area(square, hexagon, 16.0);
        REQUIRE(raster == Catch::Approx(exact).margin(0.02 * std::max(1.0, exact)));
    }
}

TEST_CASE("harris keypoints find square corners") {
    BinaryMask m = filled_rect_mask(64, 64, 16, 16, 47, 47);
    GrayImage img(64, 64);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) img.at(x, y) = m.at(x, y) ? 1.0 : 0.0;

    Contour c = extract_contour(m);
    auto kps = harris_keypoints(img, c, 4);
    REQUIRE(kps.size() == 4);

    const Vec2 corners[4] = {{16, 16}, {47, 16}, {47, 47}, {16, 47}};
    for (const auto& kp : kps) {
        double best = std::numeric_limits<double>::max();
        for (const Vec2& corner : corners) best = std::min(best, (kp.position - corner).norm());
        CHECK(best <= 2.0);
        CHECK(std::isfinite(kp.curvature));
        CHECK(kp.edge_angle >= 0.0);
        CHECK(kp.edge_angle < 360.0);
    }

    // Independent oracle: argmax of the raw response in each quadrant lands
    // within 2 px of the geometric corner.
    GrayImage resp = geometry::detail::harris_response(img);
    for (const Vec2& corner : corners) {
        Vec2 best{0, 0};
        double best_r = std::numeric_limits<double>::lowest();
        int qx0 = corner.x < 32 ? 0 : 32, qy0 = corner.y < 32 ? 0 : 32;
        for (int y = qy0; y < qy0 + 32; ++y)
            for (int x = qx0; x < qx0 + 32; ++x)
                if (resp.at(x, y) > best_r) {
                    best_r = resp.at(x, y);
                    best = {double(x), double(y)};
                }
        CHECK((best - corner).norm() <= 2.0);
    }
}

TEST_CASE("harris falls back to uniform arc-length sampling on a disk") {
    BinaryMask m(64, 64);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
            if ((x - 32.0) * (x - 32.0) + (y - 32.0) * (y - 32.0) <= 20.0 * 20.0) m.at(x, y) = 1;
    // Featureless intensity image: no corner response anywhere, so every
    // keypoint comes from the arc-length fallback.
    GrayImage img(64, 64, 0.5);

    Contour c = extract_contour(m);
    auto kps = harris_keypoints(img, c, 8);
    REQUIRE(kps.size() == 8);

    // Uniform spacing: consecutive gaps along the boundary are about equal.
    std::vector<double> gaps;
    for (size_t i = 0; i < kps.size(); ++i)
        gaps.push_back((kps[(i + 1) % kps.size()].position - kps[i].position).norm());
    double mean = 0;
    for (double g : gaps) mean += g;
    mean /= double(gaps.size());
    for (double g : gaps) CHECK(g == Catch::Approx(mean).epsilon(0.25));
}

TEST_CASE("harris requires a contour") {
    GrayImage img(32, 32);
    Contour empty;
    CHECK_THROWS_AS(harris_keypoints(img, empty, 4), EmptyContour);
}

TEST_CASE("keypoints sit on the contour polyline") {
    BinaryMask m = filled_rect_mask(64, 64, 10, 20, 50, 44);
    GrayImage img(64, 64);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) img.at(x, y) = m.at(x, y) ? 1.0 : 0.0;
    Contour c = extract_contour(m);
    auto kps = harris_keypoints(img, c, 12);
    REQUIRE(kps.size() >= 12);
    for (const auto& kp : kps)
        CHECK(point_polyline_distance(kp.position, c.points) <= 0.5);
}
