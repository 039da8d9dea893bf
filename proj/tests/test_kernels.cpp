#include <doctest.h>

#include <cmath>
#include <vector>

#include "factforge/kernels.hpp"
#include "factforge/rng.hpp"

using namespace factforge;

namespace {

template <typename T>
std::vector<T> random_vec(Rng& rng, size_t n) {
    std::vector<T> v(n);
    for (T& x : v) x = static_cast<T>(rng.next_gaussian());
    return v;
}

struct ScalarGuard {
    ~ScalarGuard() { kernels::force_scalar(false); }
};

} // namespace

TEST_CASE("dispatch matches scalar reference across sizes") {
    ScalarGuard guard;
    Rng rng(42);
    // sizes chosen to exercise full SIMD lanes plus every tail length
    for (size_t n : {size_t(0), size_t(1), size_t(3), size_t(7), size_t(8), size_t(9),
                     size_t(15), size_t(16), size_t(64), size_t(257), size_t(1000)}) {
        auto af = random_vec<float>(rng, n);
        auto bf = random_vec<float>(rng, n);
        auto ad = random_vec<double>(rng, n);
        auto bd = random_vec<double>(rng, n);

        kernels::force_scalar(false);
        float dot_f = kernels::dot(af.data(), bf.data(), n);
        double dot_d = kernels::dot(ad.data(), bd.data(), n);
        float sq_f = kernels::sq_sum(af.data(), n);
        double sq_d = kernels::sq_sum(ad.data(), n);

        float ref_dot_f = kernels::scalar::dot(af.data(), bf.data(), n);
        double ref_dot_d = kernels::scalar::dot(ad.data(), bd.data(), n);
        float ref_sq_f = kernels::scalar::sq_sum(af.data(), n);
        double ref_sq_d = kernels::scalar::sq_sum(ad.data(), n);

        // FMA reassociation changes rounding, so compare with a tolerance
        CHECK(dot_f == doctest::Approx(ref_dot_f).epsilon(1e-5));
        CHECK(dot_d == doctest::Approx(ref_dot_d).epsilon(1e-12));
        CHECK(sq_f == doctest::Approx(ref_sq_f).epsilon(1e-5));
        CHECK(sq_d == doctest::Approx(ref_sq_d).epsilon(1e-12));

        auto yf = random_vec<float>(rng, n);
        auto yf_ref = yf;
        auto yd = random_vec<double>(rng, n);
        auto yd_ref = yd;
        kernels::axpy(1.5f, af.data(), yf.data(), n);
        kernels::scalar::axpy(1.5f, af.data(), yf_ref.data(), n);
        kernels::axpy(1.5, ad.data(), yd.data(), n);
        kernels::scalar::axpy(1.5, ad.data(), yd_ref.data(), n);
        for (size_t i = 0; i < n; ++i) {
            CHECK(yf[i] == doctest::Approx(yf_ref[i]).epsilon(1e-6));
            CHECK(yd[i] == doctest::Approx(yd_ref[i]).epsilon(1e-14));
        }
    }
}

TEST_CASE("force_scalar routes around the SIMD path") {
    ScalarGuard guard;
    Rng rng(7);
    auto a = random_vec<float>(rng, 33);
    auto b = random_vec<float>(rng, 33);
    kernels::force_scalar(true);
    CHECK(kernels::avx2_active() == false);
    float forced = kernels::dot(a.data(), b.data(), a.size());
    float ref = kernels::scalar::dot(a.data(), b.data(), a.size());
    CHECK(forced == ref); // exactly the scalar path
    kernels::force_scalar(false);
}

TEST_CASE("scale and sum helpers") {
    std::vector<double> v = {1.0, 2.0, 3.0};
    kernels::scale(2.0, v.data(), v.size());
    CHECK(v == std::vector<double>{2.0, 4.0, 6.0});
    CHECK(kernels::sum(v.data(), v.size()) == 12.0);
    CHECK(kernels::scalar::sq_sum(v.data(), v.size()) == 56.0);
}

TEST_CASE("rng streams are deterministic and split is order-independent") {
    Rng a(123), b(123);
    for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng base(5);
    Rng s1 = base.split("alpha");
    base.split("ignored"); // split is const; must not disturb the parent
    Rng s2 = base.split("alpha");
    CHECK(s1.next_u64() == s2.next_u64());
    CHECK(base.split("alpha").next_u64() != base.split("beta").next_u64());
}

TEST_CASE("next_below stays in range and shuffle is a permutation") {
    Rng rng(9);
    for (int i = 0; i < 1000; ++i) CHECK(rng.next_below(7) < 7);
    std::vector<int> v = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    auto shuffled = v;
    rng.shuffle(shuffled);
    auto sorted = shuffled;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == v);
}

TEST_CASE("gaussian moments are plausible") {
    Rng rng(2024);
    double sum = 0, sq = 0;
    const int N = 20000;
    for (int i = 0; i < N; ++i) {
        double g = rng.next_gaussian();
        sum += g;
        sq += g * g;
    }
    CHECK(std::abs(sum / N) < 0.05);
    CHECK(sq / N == doctest::Approx(1.0).epsilon(0.05));
}
