#include <cmath>
#include <sstream>
#include <stdexcept>

#include <gtest/gtest.h>

#include "sfc/chip.hpp"
#include "sfc/errors.hpp"
#include "sfc/random.hpp"

using namespace sfc;

namespace {

EmulatedNetwork single_projection(int count, std::size_t population, double sigma, std::uint64_t mismatch_seed = 1) {
    Topology t;
    t.add_virtual();
    t.add_unit({.name = "post", .population = population});
    t.connect(virtual_node(0), 0, count);
    return build_network(t, ChipConfig{}, MismatchModel{sigma, mismatch_seed});
}

double post_rate(const EmulatedNetwork& net, double pre_rate, double window, std::uint64_t seed) {
    const auto in = net.stimulate(RateVector{pre_rate}, window, seed);
    return net.unit_rates(net.run_window(in, window, seed))[0];
}

} // namespace

TEST(build_network, zero_mismatch_gives_identical_parameters) {
    Topology t;
    t.add_unit({.name = "a", .population = 10, .core = 0});
    t.add_unit({.name = "b", .population = 7, .core = 2});
    const auto net = build_network(t, ChipConfig{}, MismatchModel{0.0, 3});
    const AdexpParams base{};
    for (const auto& u : net.units())
        for (const auto& p : u.member_params) {
            EXPECT_EQ(p.tau, base.tau);
            EXPECT_EQ(p.i_gain, base.i_gain);
            EXPECT_EQ(p.spike_threshold, base.spike_threshold);
        }
}

TEST(build_network, mismatch_is_deterministic_per_seed) {
    const auto a = single_projection(1, 10, 0.1, 42);
    const auto b = single_projection(1, 10, 0.1, 42);
    const auto c = single_projection(1, 10, 0.1, 43);
    for (std::size_t m = 0; m < 10; ++m) {
        EXPECT_EQ(a.unit(0).member_params[m].tau, b.unit(0).member_params[m].tau);
        EXPECT_EQ(a.unit(0).member_params[m].spike_threshold, b.unit(0).member_params[m].spike_threshold);
    }
    EXPECT_NE(a.unit(0).member_params[0].tau, c.unit(0).member_params[0].tau);
    // Members differ from each other under non-zero mismatch.
    EXPECT_NE(a.unit(0).member_params[0].tau, a.unit(0).member_params[1].tau);
}

TEST(build_network, fan_in_of_65_is_rejected) {
    Topology t;
    for (int i = 0; i < 65; ++i) t.add_virtual();
    t.add_unit({.name = "post", .population = 1});
    for (std::uint32_t i = 0; i < 65; ++i) t.connect(virtual_node(i), 0, 1);
    try {
        build_network(t, ChipConfig{}, MismatchModel{});
        FAIL() << "expected topology_error";
    } catch (const topology_error& e) {
        EXPECT_NE(std::string(e.what()).find("fan-in"), std::string::npos) << e.what();
    }
}

TEST(build_network, chip_capacity_is_enforced) {
    Topology t;
    for (int i = 0; i < 5; ++i) t.add_unit({.name = "u" + std::to_string(i), .population = 250});
    EXPECT_THROW(build_network(t, ChipConfig{}, MismatchModel{}), topology_error);
    Topology fits;
    for (int i = 0; i < 4; ++i) fits.add_unit({.name = "u" + std::to_string(i), .population = 256});
    EXPECT_NO_THROW(build_network(fits, ChipConfig{}, MismatchModel{}));
}

TEST(build_network, connection_magnitude_is_enforced) {
    Topology t;
    t.add_virtual();
    t.add_unit({.name = "post", .population = 1});
    t.connect(virtual_node(0), 0, 64);
    EXPECT_THROW(build_network(t, ChipConfig{}, MismatchModel{}), topology_error);
}

TEST(fabric, sign_change_logs_type_switch) {
    auto net = single_projection(0, 1, 0.0);
    auto& f = net.fabric();
    f.set(virtual_node(0), 0, 5, 1);
    f.set(virtual_node(0), 0, -3, 2);
    std::size_t switches = 0;
    for (const auto& e : f.audit_log()) switches += e.type_switch;
    EXPECT_EQ(switches, 1u);
    EXPECT_EQ(f.count(virtual_node(0), 0), -3);

    f.clear_audit_log();
    f.set(virtual_node(0), 0, 5, 3);
    f.clear_audit_log();
    f.set(virtual_node(0), 0, 7, 4);
    ASSERT_EQ(f.audit_log().size(), 1u);
    EXPECT_FALSE(f.audit_log()[0].type_switch);
    EXPECT_EQ(f.audit_log()[0].old_count, 5);
    EXPECT_EQ(f.audit_log()[0].new_count, 7);
}

TEST(fabric, fan_in_overflow_is_rejected_without_change) {
    Topology t;
    t.add_virtual();
    t.add_virtual();
    t.add_unit({.name = "post", .population = 1});
    t.connect(virtual_node(0), 0, 63);
    auto net = build_network(t, ChipConfig{}, MismatchModel{});
    const SynapseFabric before = net.fabric();
    EXPECT_THROW(net.fabric().set(virtual_node(1), 0, -2), capacity_error);
    EXPECT_EQ(net.fabric(), before);
    EXPECT_NO_THROW(net.fabric().set(virtual_node(1), 0, -1));
    EXPECT_EQ(net.fabric().fan_in_used(0), 64);
    // The functional form agrees.
    EXPECT_THROW(apply_connection_delta(net.fabric(), virtual_node(1), 0, 2), capacity_error);
}

TEST(fabric, fan_out_budget_counts_post_members) {
    Topology t;
    const auto pre = t.add_unit({.name = "pre", .population = 1});
    for (int i = 0; i < 4; ++i) t.add_unit({.name = "post" + std::to_string(i), .population = 200});
    auto net = build_network(t, ChipConfig{}, MismatchModel{});
    // |count| slots per post member: 5 x 200 = 1000 fits, 6 x 200 does not.
    for (std::uint32_t p = 1; p <= 4; ++p) net.fabric().set(unit_node(pre), p, 1);
    EXPECT_EQ(net.fabric().fan_out_used(unit_node(pre)), 800);
    EXPECT_NO_THROW(net.fabric().set(unit_node(pre), 1, 2));
    EXPECT_THROW(net.fabric().set(unit_node(pre), 2, -2), capacity_error);
    // Virtual channels are off-chip and carry no fan-out budget.
    EXPECT_EQ(net.fabric().fan_out_used(virtual_node(0)), 0);
}

TEST(fabric, invariants_hold_under_random_mutations) {
    Topology t;
    for (int i = 0; i < 6; ++i) t.add_virtual();
    for (int i = 0; i < 3; ++i) t.add_unit({.name = "u" + std::to_string(i), .population = 4});
    auto net = build_network(t, ChipConfig{}, MismatchModel{});
    auto rng = make_stream(2024, 0, stream_purpose::shuffle);
    std::size_t rejected = 0;
    for (int k = 0; k < 20000; ++k) {
        const auto r = rng();
        const bool from_unit = (r & 1u) != 0;
        const NodeId pre = from_unit ? unit_node(static_cast<std::uint32_t>((r >> 1) % 3))
                                     : virtual_node(static_cast<std::uint32_t>((r >> 1) % 6));
        const auto post = static_cast<std::uint32_t>((r >> 8) % 3);
        const int count = static_cast<int>((r >> 16) % 127) - 63;
        const SynapseFabric before = net.fabric();
        try {
            net.fabric().set(pre, post, count, k);
        } catch (const capacity_error&) {
            ++rejected;
            ASSERT_EQ(net.fabric(), before);
        }
        for (std::uint32_t u = 0; u < 3; ++u) ASSERT_LE(net.fabric().fan_in_used(u), 64);
        ASSERT_NO_THROW(net.fabric().validate());
    }
    EXPECT_GT(rejected, 0u);
}

TEST(fabric, table_round_trip) {
    auto net = single_projection(12, 1, 0.0);
    std::stringstream ss;
    write_fabric(ss, net.fabric());
    EXPECT_EQ(ss.str().rfind("pre post count\n", 0), 0u);
    auto other = single_projection(0, 1, 0.0);
    read_fabric(ss, other.fabric());
    EXPECT_EQ(other.fabric(), net.fabric());
}

TEST(run_window, silent_network_has_no_spikes) {
    Topology t;
    t.add_virtual();
    t.add_unit({.name = "a", .population = 10});
    t.add_unit({.name = "b", .population = 10});
    const auto net = build_network(t, ChipConfig{}, MismatchModel{});
    const SpikeTrain none(net.virtual_member_channels(), 1.0);
    EXPECT_TRUE(net.run_window(none, 1.0, 5).empty());
    // Driving an unconnected input changes nothing either.
    EXPECT_TRUE(net.run_window(net.stimulate(RateVector{100.0}, 1.0, 5), 1.0, 5).empty());
}

TEST(run_window, rejects_window_mismatch) {
    const auto net = single_projection(8, 1, 0.0);
    EXPECT_THROW(net.run_window(net.stimulate(RateVector{10.0}, 1.0, 0), 0.5, 0), std::invalid_argument);
}

TEST(run_window, post_rate_non_decreasing_in_pre_rate) {
    const auto net = single_projection(32, 10, 0.1);
    double previous = -1.0;
    for (double pre = 0.0; pre <= 150.0; pre += 10.0) {
        // Averaging a few windows keeps Poisson noise well below the step.
        double rate = 0.0;
        for (std::uint64_t s = 0; s < 4; ++s) rate += post_rate(net, pre, 1.0, s) / 4.0;
        EXPECT_GE(rate, previous - 0.5) << "pre " << pre;
        previous = rate;
    }
    EXPECT_GT(previous, 0.0);
}

TEST(run_window, doubling_count_raises_post_rate) {
    const auto n8 = single_projection(8, 10, 0.1);
    const auto n16 = single_projection(16, 10, 0.1);
    EXPECT_GT(post_rate(n16, 100.0, 1.0, 3), post_rate(n8, 100.0, 1.0, 3));
}

TEST(run_window, population_averaging_reduces_rate_variance) {
    auto spread = [](std::size_t population) {
        const auto net = single_projection(32, population, 0.1, 9);
        std::vector<double> rates;
        for (std::uint64_t s = 0; s < 30; ++s) rates.push_back(post_rate(net, 50.0, 0.2, 100 + s));
        double mean = 0.0;
        for (double r : rates) mean += r / rates.size();
        double var = 0.0;
        for (double r : rates) var += (r - mean) * (r - mean) / (rates.size() - 1);
        return std::sqrt(var);
    };
    EXPECT_LT(spread(10), spread(1));
}

TEST(run_window, deterministic_for_fixed_seed) {
    const auto net = single_projection(20, 10, 0.1);
    const auto in = net.stimulate(RateVector{60.0}, 0.5, 77);
    EXPECT_EQ(net.run_window(in, 0.5, 77), net.run_window(in, 0.5, 77));
}

TEST(run_window, recorder_relays_its_source) {
    Topology t;
    t.add_virtual();
    t.add_unit({.name = "rec", .population = 10, .kind = UnitKind::recorder, .recorder_source = 0});
    const auto net = build_network(t, ChipConfig{}, MismatchModel{});
    const auto in = net.stimulate(RateVector{40.0}, 1.0, 8);
    const auto out = net.run_window(in, 1.0, 8);
    // Member m relays generator m.
    const auto in_counts = in.counts();
    const auto out_counts = out.counts();
    for (std::size_t m = 0; m < 10; ++m) EXPECT_EQ(out_counts[m], in_counts[m]) << m;
    EXPECT_NEAR(net.unit_rates(out)[0], 40.0, 3.0 * std::sqrt(40.0 / 10.0));
}

TEST(generator_transfer, clamps_at_zero) {
    const GeneratorTransfer g{0.8, -5.0};
    EXPECT_DOUBLE_EQ(g.apply(100.0), 75.0);
    EXPECT_DOUBLE_EQ(g.apply(2.0), 0.0);
}

TEST(node_id, text_round_trip) {
    EXPECT_EQ(to_string(virtual_node(3)), "v3");
    EXPECT_EQ(to_string(unit_node(12)), "u12");
    EXPECT_EQ(parse_node("v3"), virtual_node(3));
    EXPECT_EQ(parse_node("u12"), unit_node(12));
    EXPECT_THROW(parse_node("x1"), std::invalid_argument);
}
