#include <catch2/catch_amalgamated.hpp>

#include "mtunet/optimizer.hpp"

using namespace mtunet;

TEST_CASE("adabelief single step matches the hand-computed oracle") {
    // Scalar param 0, g = 1, lr = 0.1, defaults: frozen oracle value computed
    // by hand before the build:
    //   m = 0.1, s = 0.001*0.81 + 1e-8, mhat = 1, shat = 0.8100100000000001
    //   param = -0.1 / (sqrt(shat) + 1e-8) = -0.1111104240118528
    auto p = Tensor::make({1}, std::vector<double>{0.0});
    AdaBelief opt;
    opt.add_param("p", p);
    p->grad[0] = 1.0;
    opt.step(0.1);
    CHECK(p->data[0] == Catch::Approx(-0.1111104240118528).epsilon(1e-14));
}

TEST_CASE("zero gradient leaves the parameter unchanged") {
    auto p = Tensor::make({3}, std::vector<double>{1.0, -2.0, 0.25});
    AdaBelief opt;
    opt.add_param("p", p);
    opt.step(0.5);
    CHECK(p->data == std::vector<double>{1.0, -2.0, 0.25});
}

TEST_CASE("identical gradients drive identical parameters identically") {
    auto a = Tensor::make({2}, std::vector<double>{0.5, -0.5});
    auto b = Tensor::make({2}, std::vector<double>{0.5, -0.5});
    AdaBelief opt;
    opt.add_param("a", a);
    opt.add_param("b", b);
    for (int step = 0; step < 5; ++step) {
        a->grad = {1.0, -2.0};
        b->grad = {1.0, -2.0};
        opt.step(1e-2);
    }
    REQUIRE(a->data == b->data);
}

TEST_CASE("non-finite gradient is a hard error naming the parameter") {
    auto p = Tensor::make({1});
    AdaBelief opt;
    opt.add_param("pm.fc1.weight", p);
    p->grad[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_WITH(opt.step(0.1), Catch::Matchers::ContainsSubstring("pm.fc1.weight"));
}

TEST_CASE("zero_grad clears registered parameter gradients") {
    auto p = Tensor::make({2});
    AdaBelief opt;
    opt.add_param("p", p);
    p->grad = {3.0, 4.0};
    opt.zero_grad();
    CHECK(p->grad == std::vector<double>{0.0, 0.0});
}

TEST_CASE("step counter increments by one per step") {
    auto p = Tensor::make({1});
    AdaBelief opt;
    opt.add_param("p", p);
    CHECK(opt.steps_taken() == 0);
    opt.step(0.1);
    opt.step(0.1);
    CHECK(opt.steps_taken() == 2);
}
