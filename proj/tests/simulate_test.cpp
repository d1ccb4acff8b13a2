/*
 * Copyright 2026 The veil authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include <catch2/catch_amalgamated.hpp>

#include <veil/simulate.hpp>

#include "test_util.hpp"

using namespace veil;

namespace
{

ShaperConfig throttle_shaper()
{
    ShaperConfig cfg;
    cfg.class_rates_bps["video.example"] = 1e6;
    cfg.default_rate_bps                 = 10e6;
    return cfg;
}

LinkConfig narrow_link()
{
    return LinkConfig{ 2.5e6, 5000 };
}

} // namespace

TEST_CASE( "simulated transfers reproduce the shaping plateaus" )
{
    const std::uint64_t payload = 2 * 1000 * 1000; // smaller than the acceptance run, same shape

    SECTION( "legacy mode is throttled to the class rate" )
    {
        ClientConfig cc = test::masked_client_config( "video.example", 21 );
        cc.mode         = ClientMode::legacy;
        auto report     = simulate_transfer( cc, test::default_server_config( 22 ),
                    throttle_shaper(), narrow_link(), payload );
        REQUIRE( report.ok );
        CHECK( report.classification == FlowClass::identified );
        CHECK( report.sni == "video.example" );
        CHECK( report.steady_bps == Catch::Approx( 1e6 ).epsilon( 0.10 ) );
        CHECK( report.handshakes_completed == 1 );
    }
    SECTION( "masked mode rides at link capacity" )
    {
        auto report = simulate_transfer( test::masked_client_config( "video.example", 23 ),
                test::default_server_config( 24 ), throttle_shaper(), narrow_link(), payload );
        REQUIRE( report.ok );
        CHECK( report.classification == FlowClass::unknown );
        CHECK_FALSE( report.sni.has_value() );
        CHECK( report.steady_bps == Catch::Approx( 2.5e6 ).epsilon( 0.10 ) );
        CHECK( report.handshakes_completed == 2 );
        CHECK( report.phase1_us >= 0 );
        CHECK( report.phase2_us > 0 );
    }
    SECTION( "zero payload yields a handshake-only report" )
    {
        auto report = simulate_transfer( test::masked_client_config( "video.example", 25 ),
                test::default_server_config( 26 ), throttle_shaper(), narrow_link(), 0 );
        REQUIRE( report.ok );
        CHECK( report.payload_bytes == 0 );
        CHECK( report.capture.size() == 18 );
        CHECK( report.phase2_us > 0 );
        CHECK( report.timeline.size() <= 1 );
    }
    SECTION( "handshake failures propagate into the report" )
    {
        auto report = simulate_transfer( test::masked_client_config( "missing.example", 27 ),
                test::default_server_config( 28 ), throttle_shaper(), narrow_link(), payload );
        CHECK_FALSE( report.ok );
        CHECK_FALSE( report.error.empty() );
        CHECK_FALSE( report.capture.empty() );
    }
}

TEST_CASE( "simulation capture is faithful and re-scannable" )
{
    auto report = simulate_transfer( test::masked_client_config( "video.example", 31 ),
            test::default_server_config( 32 ), throttle_shaper(), narrow_link(), 100'000 );
    REQUIRE( report.ok );

    SECTION( "offline classification equals the online result" )
    {
        FlowState offline = observe_capture( report.capture, report.capture[0].flow );
        CHECK( offline.classification == report.classification );
        CHECK( offline.plaintext_client_hellos == 1 );
    }
    SECTION( "observer passivity: delivered bytes equal offered bytes" )
    {
        std::uint64_t s2c = 0;
        for( const auto& e : report.capture )
            if( e.dir == Direction::server_to_client )
                s2c += e.raw.size();
        CHECK( s2c == report.delivered_wire_bytes );
    }
    SECTION( "reports are deterministic given seeds" )
    {
        auto again = simulate_transfer( test::masked_client_config( "video.example", 31 ),
                test::default_server_config( 32 ), throttle_shaper(), narrow_link(), 100'000 );
        REQUIRE( again.ok );
        CHECK( again.total_us == report.total_us );
        CHECK( again.timeline == report.timeline );
        REQUIRE( again.capture.size() == report.capture.size() );
        for( std::size_t i = 0; i < report.capture.size(); ++i )
            CHECK( again.capture[i].raw == report.capture[i].raw );
    }
}

TEST_CASE( "bench quantifies the second-handshake overhead" )
{
    ClientConfig cc = test::masked_client_config( "video.example", 41 );
    ServerConfig sc = test::default_server_config( 42 );
    LinkConfig   link{ 10e6, 8000 };

    SECTION( "hundred-megabit payload keeps the overhead under one percent" )
    {
        auto bench = run_bench( cc, sc, link, 12'500'000, 3 );
        REQUIRE( bench.ok );
        CHECK( bench.masked_us > bench.legacy_us );
        CHECK( bench.extra_handshake_fraction >= 0.0 );
        CHECK( bench.extra_handshake_fraction < 0.01 );
        CHECK( bench.phase2_wire_bytes < 4096 );
        // message-count arithmetic: four extra flights on this link
        const double predicted_us = bench.phase2_wire_bytes * 8e6 / link.capacity_bps
                + 4.0 * link.propagation_us;
        const double measured_us = static_cast<double>( bench.masked_us - bench.legacy_us );
        CHECK( measured_us == Catch::Approx( predicted_us ).epsilon( 0.50 ) );
    }
    SECTION( "zero payload is handshake-dominated but well-formed" )
    {
        auto bench = run_bench( cc, sc, link, 0, 1 );
        REQUIRE( bench.ok );
        CHECK( bench.extra_handshake_fraction >= 0.0 );
        CHECK( bench.extra_handshake_fraction < 1.0 );
        CHECK( bench.extra_handshake_fraction > 0.2 );
    }
    SECTION( "repeat count does not change the schema" )
    {
        auto one  = run_bench( cc, sc, link, 100'000, 1 );
        auto nine = run_bench( cc, sc, link, 100'000, 9 );
        REQUIRE( one.ok );
        REQUIRE( nine.ok );
        CHECK( one.repeats == 1 );
        CHECK( nine.repeats == 9 );
        CHECK( one.payload_bytes == nine.payload_bytes );
    }
}

TEST_CASE( "demo store builder" )
{
    auto store = make_demo_store( "front.example", { "video.example", "mail.example" }, 77 );
    REQUIRE( store.ok() );
    CHECK( store.value().default_entry.cert.subject == "front.example" );
    CHECK( store.value().named.size() == 2 );
    CHECK( store.value().named.count( "video.example" ) == 1 );
    CHECK( generate_self_signed( "", 30 ).code() == Err::invalid_subject );
}
