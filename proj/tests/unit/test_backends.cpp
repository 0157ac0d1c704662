#include <doctest.h>

#include <cmath>
#include <memory>
#include <random>

#include "c33d/attention.hpp"
#include "c33d/backends.hpp"
#include "c33d/error.hpp"
#include "c33d/schedule.hpp"
#include "oracles.hpp"

using namespace c33d;

namespace {

Matrix random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Matrix m(r, c);
    for (double& v : m.data) v = n(rng);
    return m;
}

oracle::Rows rows_of(const Matrix& m) {
    oracle::Rows out(m.rows, std::vector<double>(m.cols));
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) out[i][j] = m(i, j);
    return out;
}

double max_diff(const Matrix& m, const oracle::Rows& r) {
    double d = 0.0;
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) d = std::max(d, std::abs(m(i, j) - r[i][j]));
    return d;
}

LatentGrid random_latent(std::mt19937_64& rng, std::size_t h, std::size_t w, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    LatentGrid g(3, h, w);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = n(rng);
    return g;
}

Image constant_image(std::size_t n, const Rgb& c) { return Image(n, n, c); }

double sq(const Rgb& c) { return c[0] * c[0] + c[1] * c[1] + c[2] * c[2]; }

// phi of a constant image with full mask: every cell is (1, c, 0, 0, 0).
double constant_phi_cosine(const Rgb& a, const Rgb& b) {
    return (1.0 + a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) / std::sqrt((1.0 + sq(a)) * (1.0 + sq(b)));
}

}  // namespace

TEST_SUITE("backends") {

TEST_CASE("uniform softmax averages the values") {
    AttentionProjections p{Matrix(2, 1, 0.0), Matrix(2, 1, 0.0), Matrix(2, 1)};
    p.w_v(0, 0) = 1.0;
    Matrix q(3, 2, 0.0);
    Matrix kv(2, 2);
    kv(0, 0) = 1.0;
    kv(1, 0) = 3.0;
    const AttentionResult r = mself_attn(q, kv, p, 1.0);
    REQUIRE(r.output.rows == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(r.output(i, 0) == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("single-row self-attention returns the value projection") {
    std::mt19937_64 rng(2);
    const Matrix x = random_matrix(rng, 1, 5);
    const AttentionProjections p{random_matrix(rng, 5, 3), random_matrix(rng, 5, 3), random_matrix(rng, 5, 4)};
    const AttentionResult r = mself_attn(x, x, p, 3.0);
    const Matrix v = matmul(x, p.w_v);
    CHECK(r.weights(0, 0) == 1.0);
    for (std::size_t j = 0; j < 4; ++j) CHECK(r.output(0, j) == doctest::Approx(v(0, j)).epsilon(1e-14));
}

TEST_CASE("attention matches the scalar-loop oracle") {
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<std::size_t> dim(1, 9);
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t nq = dim(rng), nk = dim(rng), in = dim(rng), dk = dim(rng), dv = dim(rng);
        const Matrix q = random_matrix(rng, nq, in), kv = random_matrix(rng, nk, in);
        const AttentionProjections p{random_matrix(rng, in, dk), random_matrix(rng, in, dk), random_matrix(rng, in, dv)};
        oracle::Rows w;
        const oracle::Rows expect =
            oracle::attention(rows_of(q), rows_of(kv), rows_of(p.w_q), rows_of(p.w_k), rows_of(p.w_v), double(dk), &w);
        const AttentionResult r = mself_attn(q, kv, p, double(dk));
        CHECK(max_diff(r.output, expect) <= 1e-10);
        CHECK(max_diff(r.weights, w) <= 1e-10);
        for (std::size_t i = 0; i < nq; ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < nk; ++j) sum += r.weights(i, j);
            CHECK(std::abs(sum - 1.0) <= 1e-6);
        }
    }
}

TEST_CASE("attention rejects mismatched shapes") {
    Matrix x(2, 3);
    AttentionProjections p{Matrix(4, 2), Matrix(3, 2), Matrix(3, 2)};
    CHECK_THROWS_AS(mself_attn(x, x, p, 2.0), ShapeError);
    AttentionProjections ok{Matrix(3, 2), Matrix(3, 2), Matrix(3, 2)};
    CHECK_THROWS_AS(mself_attn(x, Matrix(2, 4), ok, 2.0), ShapeError);
    CHECK_THROWS_AS(mself_attn(x, x, ok, 0.0), ShapeError);
    CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), ShapeError);
}

TEST_CASE("toy denoiser is deterministic and shape preserving") {
    const ScheduleCoeffs s = make_schedule(50, SamplerKind::AncestralLike);
    const ToyDenoiser a(s.alpha_bar), b(s.alpha_bar);
    std::mt19937_64 rng(9);
    const LatentGrid x = random_latent(rng, 16, 12);
    Condition c;
    c.tau = "a red chair";
    const LatentGrid e1 = a.predict_noise(x, 17, c, InjectionConfig::disabled());
    CHECK(e1.same_shape(x));
    CHECK(e1 == a.predict_noise(x, 17, c, InjectionConfig::disabled()));
    CHECK(e1 == b.predict_noise(x, 17, c, InjectionConfig::disabled()));
    CHECK_FALSE(e1 == a.predict_noise(x, 17, Condition::null(), InjectionConfig::disabled()));
    CHECK_THROWS_AS(a.predict_noise(LatentGrid(2, 4, 4), 1, c, InjectionConfig::disabled()), ShapeError);
    CHECK_THROWS_AS(a.predict_noise(x, 51, c, InjectionConfig::disabled()), InvalidSchedule);
}

TEST_CASE("self-injection equals plain self-attention") {
    const ScheduleCoeffs s = make_schedule(4, SamplerKind::AncestralLike);
    const ToyDenoiser den(s.alpha_bar);
    std::mt19937_64 rng(13);
    for (std::size_t t = 1; t <= 4; ++t) {
        const LatentGrid x = random_latent(rng, 16, 16, 0.7);
        Condition c;
        auto eta = std::make_shared<LatentGrid>(x);
        const double inv = 1.0 / std::sqrt(s.alpha_bar[t]);
        for (std::size_t i = 0; i < eta->size(); ++i) (*eta)[i] = x[i] * inv;
        c.eta = eta;
        const InjectionConfig all{true, {0, 1}, {1, 4}};
        const LatentGrid plain = den.predict_noise(x, t, c, InjectionConfig::disabled());
        const LatentGrid inj = den.predict_noise(x, t, c, all);
        CHECK(plain == inj);
    }
}

TEST_CASE("constant eta makes every injected row the value projection of c") {
    const ScheduleCoeffs s = make_schedule(4, SamplerKind::AncestralLike);
    const ToyDenoiser den(s.alpha_bar);
    std::mt19937_64 rng(17);
    const LatentGrid x = random_latent(rng, 16, 16);
    Condition c;
    c.eta = std::make_shared<LatentGrid>(3, 16, 16, 0.8);
    const InjectionConfig inj{true, {0, 1}, {3, 3}};
    ToyTrace trace;
    den.predict_traced(x, 3, c, inj, &trace);
    REQUIRE(trace.sites.size() == 2);
    for (std::size_t site = 0; site < 2; ++site) {
        CHECK(trace.injected[site]);
        const Matrix& kv = trace.kv_rows[site];
        // reference rows are all equal, so V(c) is any row's value projection
        Matrix one(1, kv.cols);
        for (std::size_t j = 0; j < kv.cols; ++j) one(0, j) = kv(0, j);
        const Matrix v = matmul(one, trace.projections[site].w_v);
        const AttentionResult direct =
            mself_attn(trace.query_rows[site], kv, trace.projections[site], trace.key_dim);
        for (std::size_t r = 0; r < trace.sites[site].output.rows; ++r)
            for (std::size_t j = 0; j < v.cols; ++j) {
                CHECK(trace.sites[site].output(r, j) == doctest::Approx(v(0, j)).epsilon(1e-12));
                CHECK(direct.output(r, j) == trace.sites[site].output(r, j));
            }
    }
}

TEST_CASE("injection outside its step range leaves predictions bit-identical") {
    const ScheduleCoeffs s = make_schedule(4, SamplerKind::AncestralLike);
    const ToyDenoiser den(s.alpha_bar);
    std::mt19937_64 rng(19);
    const LatentGrid x = random_latent(rng, 16, 16);
    Condition c;
    c.eta = std::make_shared<LatentGrid>(random_latent(rng, 16, 16));
    const InjectionConfig inj{true, {1, 1}, {3, 4}};
    for (std::size_t t = 1; t <= 4; ++t) {
        const LatentGrid a = den.predict_noise(x, t, c, inj);
        const LatentGrid b = den.predict_noise(x, t, c, InjectionConfig::disabled());
        if (t < 3)
            CHECK(a == b);
        else
            CHECK_FALSE(a == b);
    }
    // site locality: the first site is untouched when only the last is injected
    ToyTrace with, without;
    den.predict_traced(x, 3, c, inj, &with);
    den.predict_traced(x, 3, c, InjectionConfig::disabled(), &without);
    CHECK(with.sites[0].output == without.sites[0].output);
    CHECK_FALSE(with.sites[1].output == without.sites[1].output);
}

TEST_CASE("missing eta is reported") {
    const ScheduleCoeffs s = make_schedule(4, SamplerKind::AncestralLike);
    const ToyDenoiser den(s.alpha_bar);
    const LatentGrid x(3, 8, 8, 0.5);
    CHECK_THROWS_AS(den.predict_noise(x, 3, Condition::null(), InjectionConfig{true, {1, 1}, {3, 4}}), MissingCondition);
    Condition concat;
    concat.usage = EtaUsage::Concat;
    CHECK_THROWS_AS(den.predict_noise(x, 3, concat, InjectionConfig::disabled()), MissingCondition);
    const ShapePullDenoiser pull(s.alpha_bar);
    CHECK_THROWS_AS(pull.predict_noise(x, 3, concat, InjectionConfig::disabled()), MissingCondition);
    CHECK_NOTHROW(den.predict_noise(x, 2, Condition::null(), InjectionConfig{true, {1, 1}, {3, 4}}));
}

TEST_CASE("injection config validation") {
    CHECK_NOTHROW(InjectionConfig::disabled().validate(2, 4));
    CHECK_NOTHROW((InjectionConfig{true, {1, 1}, {3, 4}}.validate(2, 4)));
    CHECK_THROWS_AS((InjectionConfig{true, {1, 2}, {3, 4}}.validate(2, 4)), ConfigError);
    CHECK_THROWS_AS((InjectionConfig{true, {1, 1}, {4, 3}}.validate(2, 4)), ConfigError);
    CHECK_THROWS_AS((InjectionConfig{true, {1, 1}, {0, 3}}.validate(2, 4)), ConfigError);
    CHECK_THROWS_AS((InjectionConfig{true, {1, 1}, {3, 5}}.validate(2, 4)), ConfigError);
}

TEST_CASE("toy codec round trips") {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(7, 9);
    for (double& v : img.data()) v = u(rng);
    const ToyCodec codec;
    CHECK(codec.decode(codec.encode(img)) == img);
    CHECK_THROWS_AS(codec.decode(LatentGrid(4, 2, 2)), ShapeError);
}

TEST_CASE("embedder features are unit norm") {
    const ToyEmbedder emb;
    std::mt19937_64 rng(29);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(24, 24);
    for (double& v : img.data()) v = u(rng);
    Mask m(24, 24);
    for (std::size_t y = 4; y < 20; ++y)
        for (std::size_t x = 2; x < 15; ++x) m.set(y, x, true);
    for (const auto& f : {emb.embed_image(img, m), emb.embed_image_clip(img, m), emb.embed_text("tiger"),
                          emb.embed_text("an unusual category")}) {
        double n = 0.0;
        for (double v : f) n += v * v;
        CHECK(std::abs(std::sqrt(n) - 1.0) <= 1e-6);
    }
    CHECK(cosine(emb.embed_image(img, m), emb.embed_image(img, m)) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_AS(emb.embed_image(img, Mask(24, 24)), ZeroFeature);
    CHECK_THROWS_AS(emb.embed_image_clip(img, Mask(24, 24)), ZeroFeature);
    CHECK_THROWS_AS(emb.embed_image(img, Mask(10, 24)), ShapeError);
}

TEST_CASE("distinct constant colors are not identical") {
    const ToyEmbedder emb;
    const Mask full(12, 12, 1);
    const double c =
        cosine(emb.embed_image(constant_image(12, {1, 0, 0}), full), emb.embed_image(constant_image(12, {0, 1, 0}), full));
    CHECK(c < 1.0);
    CHECK(c == doctest::Approx(constant_phi_cosine({1, 0, 0}, {0, 1, 0})).epsilon(1e-12));
}

TEST_CASE("a blend stays closer to its source than the other endpoint") {
    const ToyEmbedder emb;
    const Mask full(12, 12, 1);
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int rep = 0; rep < 200; ++rep) {
        const Rgb a{u(rng), u(rng), u(rng)}, b{u(rng), u(rng), u(rng)};
        const Rgb mid{(a[0] + b[0]) / 2, (a[1] + b[1]) / 2, (a[2] + b[2]) / 2};
        const auto fa = emb.embed_image(constant_image(12, a), full);
        const auto fb = emb.embed_image(constant_image(12, b), full);
        const auto fm = emb.embed_image(constant_image(12, mid), full);
        CHECK(cosine(fm, fa) == doctest::Approx(constant_phi_cosine(mid, a)).epsilon(1e-12));
        CHECK(cosine(fb, fa) == doctest::Approx(constant_phi_cosine(b, a)).epsilon(1e-12));
        CHECK(cosine(fm, fa) >= cosine(fb, fa) - 1e-15);
    }
}

TEST_CASE("fuser blends toward a category texture") {
    std::mt19937_64 rng(37);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image front(20, 20);
    for (double& v : front.data()) v = u(rng);
    Mask m(20, 20);
    for (std::size_t y = 3; y < 17; ++y)
        for (std::size_t x = 5; x < 14; ++x) m.set(y, x, true);

    CHECK(ToyFuser(0.0).fuse(front, m, "tiger") == front);
    const Image full = ToyFuser(1.0).fuse(front, m, "tiger");
    const Image tex = ToyFuser::procedural_texture(20, 20, "tiger");
    for (std::size_t y = 0; y < 20; ++y)
        for (std::size_t x = 0; x < 20; ++x)
            CHECK(full.pixel(y, x) == (m(y, x) ? tex.pixel(y, x) : front.pixel(y, x)));

    const ToyFuser fuser;
    const Image a = fuser.fuse(front, m, "tiger");
    CHECK(a == fuser.fuse(front, m, "tiger"));
    CHECK_FALSE(a == front);
    CHECK(a.height() == front.height());
    CHECK(a.width() == front.width());
    CHECK(fuser.ratio_for("tiger") > 0.0);
    CHECK_THROWS_AS(fuser.fuse(front, m, ""), InvalidInput);
}

TEST_CASE("backend selection") {
    const Backend toy = make_backend("toy");
    CHECK(toy.name == "toy");
    const auto den = toy.make_denoiser(make_schedule(4, SamplerKind::AncestralLike));
    CHECK(den->attention_site_count() == 2);
    CHECK(toy.default_injection_sites.second < den->attention_site_count());
    CHECK(make_backend("toy-pull").name == "toy-pull");
    CHECK_THROWS_AS(make_backend("nonexistent"), ConfigError);
    CHECK_THROWS_AS(make_backend("adapter:nobody"), ConfigError);
    register_adapter("unit-test", [] {
        Backend b = make_backend("toy");
        b.name.clear();
        return b;
    });
    CHECK(make_backend("adapter:unit-test").name == "adapter:unit-test");
}

}
