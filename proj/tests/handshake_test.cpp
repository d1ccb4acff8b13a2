/*
 * Copyright 2026 The veil authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include <algorithm>

#include <catch2/catch_amalgamated.hpp>

#include <veil/handshake.hpp>

#include "test_util.hpp"

using namespace veil;

namespace
{

bool contains_bytes( const Bytes& haystack, const std::string& needle )
{
    auto n = to_bytes( needle );
    return std::search( haystack.begin(), haystack.end(), n.begin(), n.end() )
            != haystack.end();
}

std::size_t count_plaintext_client_hellos( const WireLog& log )
{
    std::size_t n = 0;
    for( const auto& [dir, frame] : log.frames() )
    {
        if( frame.content_type != ContentType::handshake )
            continue;
        auto msg = decode_handshake( frame.payload );
        if( msg.ok() && std::holds_alternative<ClientHello>( msg.value() ) )
            ++n;
    }
    return n;
}

std::size_t count_plaintext_sni_extensions( const WireLog& log )
{
    std::size_t n = 0;
    for( const auto& [dir, frame] : log.frames() )
    {
        if( frame.content_type != ContentType::handshake )
            continue;
        auto msg = decode_handshake( frame.payload );
        if( !msg.ok() )
            continue;
        if( const auto* ch = std::get_if<ClientHello>( &msg.value() ) )
            if( find_extension( ch->extensions, kExtensionServerName ) != nullptr )
                ++n;
    }
    return n;
}

/// Frame-by-frame pump that exposes intermediate states to the test.
struct ManualPump
{
    ClientConnection client;
    ServerConnection server;

    std::vector<RecordFrame> to_server;
    std::vector<RecordFrame> to_client;

    static ManualPump start( const ClientConfig& cc, const ServerConfig& sc )
    {
        auto c = ClientConnection::create( cc );
        auto s = ServerConnection::create( sc );
        REQUIRE( c.ok() );
        REQUIRE( s.ok() );
        ManualPump pump{ std::move( c.value() ), std::move( s.value() ), {}, {} };
        auto       first = pump.client.step( std::nullopt );
        REQUIRE( first.ok() );
        pump.to_server = first.value();
        return pump;
    }

    /// Runs until `stop` returns true or traffic quiesces.
    template<typename Pred>
    void run_until( Pred stop )
    {
        for( int rounds = 0; rounds < 200; ++rounds )
        {
            if( stop() )
                return;
            if( to_server.empty() && to_client.empty() )
                return;
            if( !to_server.empty() )
            {
                RecordFrame f = to_server.front();
                to_server.erase( to_server.begin() );
                auto replies = server.step( f );
                if( replies.ok() )
                    for( auto& r : replies.value() )
                        to_client.push_back( std::move( r ) );
                continue;
            }
            RecordFrame f = to_client.front();
            to_client.erase( to_client.begin() );
            auto replies = client.step( f );
            if( replies.ok() )
                for( auto& r : replies.value() )
                    to_server.push_back( std::move( r ) );
        }
    }
};

} // namespace

TEST_CASE( "client SNI policy follows the two-phase rule" )
{
    ClientConfig masked = test::masked_client_config( "video.example" );
    CHECK_FALSE( client_sni_policy( HandshakePhase::plain, masked ).has_value() );
    CHECK( client_sni_policy( HandshakePhase::first_complete, masked )->host()
            == "video.example" );

    ClientConfig legacy = masked;
    legacy.mode         = ClientMode::legacy;
    CHECK( client_sni_policy( HandshakePhase::plain, legacy )->host() == "video.example" );
    CHECK( client_sni_policy( HandshakePhase::first_complete, legacy )->host()
            == "video.example" );
}

TEST_CASE( "server certificate selection" )
{
    auto store = test::demo_store();

    SECTION( "absent name on a plain connection gets the default certificate" )
    {
        auto entry = server_select_certificate( *store, std::nullopt, false );
        REQUIRE( entry.ok() );
        CHECK( entry.value().cert.subject == "front.example" );
    }
    SECTION( "named lookup inside the tunnel" )
    {
        auto entry = server_select_certificate( *store,
                SniValue::parse( "video.example" ).value(), true );
        REQUIRE( entry.ok() );
        CHECK( entry.value().cert.subject == "video.example" );
    }
    SECTION( "unknown name fails the handshake" )
    {
        auto r = server_select_certificate( *store,
                SniValue::parse( "other.example" ).value(), false );
        REQUIRE_FALSE( r.ok() );
        CHECK( r.code() == Err::handshake_failure );
    }
    SECTION( "the second handshake must carry a name" )
    {
        CHECK( server_select_certificate( *store, std::nullopt, true ).code()
                == Err::handshake_failure );
    }
}

TEST_CASE( "masked channel establishment" )
{
    const auto suite = GENERATE( kSuiteReal, kSuiteNull );
    CAPTURE( suite );

    ClientConfig cc = test::masked_client_config();
    cc.suites       = { suite };
    ServerConfig sc = test::default_server_config();

    WireLog log;
    auto    run = establish_masked_channel( cc, sc, &log );
    REQUIRE( run.ok() );

    SECTION( "both ends reach SecondComplete with the target identity" )
    {
        CHECK( run.value().client.phase() == HandshakePhase::second_complete );
        CHECK( run.value().server.phase() == HandshakePhase::second_complete );
        CHECK( run.value().client.established_sni()->host() == "video.example" );
        CHECK( run.value().server.established_sni()->host() == "video.example" );
        CHECK( run.value().client.peer_certificate()->subject == "video.example" );
        CHECK( run.value().client.handshakes_completed() == 2 );
        CHECK( run.value().server.handshakes_completed() == 2 );
    }
    SECTION( "exactly one plaintext ClientHello, no plaintext SNI extension" )
    {
        CHECK( count_plaintext_client_hellos( log ) == 1 );
        CHECK( count_plaintext_sni_extensions( log ) == 0 );
    }
    SECTION( "established keys are present and phase-2 fresh" )
    {
        REQUIRE( run.value().client.active_keys().has_value() );
        REQUIRE( run.value().server.active_keys().has_value() );
        CHECK( run.value().client.active_keys()->client_write_key
                == run.value().server.active_keys()->client_write_key );
    }
}

TEST_CASE( "masking invariant: the target name never hits the wire in the clear" )
{
    for( std::uint64_t seed = 1; seed <= 20; ++seed )
    {
        test::Rng   rng( seed );
        std::string target = test::random_host( rng );
        auto        store  = test::demo_store();
        CertStore   with_target = *store;
        auto        named = generate_self_signed( target, 30, seed + 100 ).value();
        with_target.named.emplace( target, CertEntry{ named.first, named.second } );

        ClientConfig cc = test::masked_client_config( target, seed );
        ServerConfig sc;
        sc.store    = std::make_shared<const CertStore>( std::move( with_target ) );
        sc.rng_seed = seed + 1;

        WireLog log;
        auto    run = establish_masked_channel( cc, sc, &log );
        REQUIRE( run.ok() );
        REQUIRE_FALSE( contains_bytes( log.concat(), target ) );
        REQUIRE( count_plaintext_sni_extensions( log ) == 0 );
    }
}

TEST_CASE( "phase-2 keys always differ from phase-1 keys" )
{
    for( std::uint64_t seed = 1; seed <= 10; ++seed )
    {
        ClientConfig cc = test::masked_client_config( "video.example", seed );
        ServerConfig sc = test::default_server_config( seed + 1000 );

        std::optional<ChannelKeys> phase1_keys;
        auto pump = ManualPump::start( cc, sc );
        pump.run_until( [&]
        {
            if( pump.client.phase() == HandshakePhase::first_complete && !phase1_keys )
                phase1_keys = pump.client.active_keys();
            return false;
        } );
        REQUIRE( phase1_keys.has_value() );
        REQUIRE( pump.client.phase() == HandshakePhase::second_complete );
        ChannelKeys phase2 = *pump.client.active_keys();
        CHECK( phase1_keys->client_write_key != phase2.client_write_key );
        CHECK( phase1_keys->server_write_key != phase2.server_write_key );
    }
}

TEST_CASE( "rekey semantics" )
{
    ClientConfig cc = test::masked_client_config();
    ServerConfig sc = test::default_server_config();

    SECTION( "rekey in Plain phase is refused" )
    {
        auto client = ClientConnection::create( cc ).value();
        auto keys   = derive_channel_keys( kSuiteNull, Bytes( 32, 0 ), Bytes( 32, 0 ),
                  Bytes( 32, 0 ), Bytes( 32, 0 ) );
        auto cert   = generate_self_signed( "x.example", 1, 1 ).value();
        auto r      = client.rekey_apply( keys.value(), cert.first,
                     SniValue::parse( "x.example" ).value() );
        REQUIRE_FALSE( r.ok() );
        CHECK( r.code() == Err::invalid_phase );
    }
    SECTION( "a frame sealed under discarded phase-1 keys fails after rekey" )
    {
        std::optional<ChannelKeys> phase1_keys;
        auto                       pump = ManualPump::start( cc, sc );
        pump.run_until( [&]
        {
            if( pump.client.phase() == HandshakePhase::first_complete && !phase1_keys )
                phase1_keys = pump.client.active_keys();
            return false;
        } );
        REQUIRE( phase1_keys.has_value() );
        REQUIRE( pump.server.phase() == HandshakePhase::second_complete );

        RecordFrame app{ ContentType::application_data, kVersionTls12, to_bytes( "stale" ) };
        auto        stale = seal_record( *phase1_keys, Direction::client_to_server, app );
        REQUIRE( stale.ok() );
        auto r = pump.server.step( stale.value() );
        REQUIRE_FALSE( r.ok() );
        CHECK( r.code() == Err::auth_failure );
    }
    SECTION( "application data after rekey echoes end to end" )
    {
        auto run = establish_masked_channel( cc, sc ).value();
        auto frames = run.client.send_application( to_bytes( "ping over rekeyed channel" ) );
        REQUIRE( frames.ok() );
        for( const auto& f : frames.value() )
            REQUIRE( run.server.step( f ).ok() );
        auto got = run.server.take_received_application();
        REQUIRE( got.size() == 1 );
        CHECK( to_string( got[0] ) == "ping over rekeyed channel" );

        auto echo = run.server.send_application( got[0] );
        REQUIRE( echo.ok() );
        for( const auto& f : echo.value() )
            REQUIRE( run.client.step( f ).ok() );
        auto back = run.client.take_received_application();
        REQUIRE( back.size() == 1 );
        CHECK( to_string( back[0] ) == "ping over rekeyed channel" );
    }
}

TEST_CASE( "legacy mode: single handshake, SNI in the clear" )
{
    ClientConfig cc = test::masked_client_config();
    cc.mode         = ClientMode::legacy;
    ServerConfig sc = test::default_server_config();

    WireLog log;
    auto    run = run_handshakes( cc, sc, &log );
    REQUIRE( run.ok() );
    CHECK( run.value().client.phase() == HandshakePhase::first_complete );
    CHECK( run.value().client.handshakes_completed() == 1 );
    CHECK( run.value().client.established_sni()->host() == "video.example" );
    CHECK( run.value().server.established_sni()->host() == "video.example" );
    CHECK( run.value().client.peer_certificate()->subject == "video.example" );
    CHECK( count_plaintext_sni_extensions( log ) == 1 );
    CHECK( contains_bytes( log.concat(), "video.example" ) );

    SECTION( "wire trace has the legacy shape" )
    {
        std::vector<ContentType>  outer;
        std::vector<std::uint8_t> plaintext_hs;
        for( const auto& [dir, frame] : log.frames() )
        {
            outer.push_back( frame.content_type );
            if( frame.content_type == ContentType::handshake )
                plaintext_hs.push_back( frame.payload[0] );
        }
        CHECK( plaintext_hs == std::vector<std::uint8_t>{ 1, 2, 11, 14, 16 } );
        CHECK( outer
                == std::vector<ContentType>{ ContentType::handshake, ContentType::handshake,
                        ContentType::handshake, ContentType::handshake, ContentType::handshake,
                        ContentType::change_cipher_spec, ContentType::application_data,
                        ContentType::change_cipher_spec, ContentType::application_data } );
    }
}

TEST_CASE( "masked run wire trace: phase 1 looks legacy, phase 2 is opaque" )
{
    ClientConfig cc = test::masked_client_config();
    ServerConfig sc = test::default_server_config();
    WireLog      log;
    REQUIRE( establish_masked_channel( cc, sc, &log ).ok() );

    std::vector<ContentType> outer;
    for( const auto& [dir, frame] : log.frames() )
        outer.push_back( frame.content_type );
    REQUIRE( outer.size() == 18 );
    // phase 1: five plaintext handshake records, two CCS, two sealed Finished
    CHECK( std::count( outer.begin(), outer.begin() + 9, ContentType::handshake ) == 5 );
    CHECK( std::count( outer.begin(), outer.begin() + 9, ContentType::change_cipher_spec ) == 2 );
    // phase 2: application_data only
    CHECK( std::count( outer.begin() + 9, outer.end(), ContentType::application_data ) == 9 );
}

TEST_CASE( "certificate pinning and rejection paths" )
{
    SECTION( "wrong subject presented in the second handshake" )
    {
        // adversarial store: the entry for video.example holds a
        // certificate actually issued for another name
        auto      evil  = generate_self_signed( "evil.example", 30, 3 ).value();
        CertStore store;
        auto      front = generate_self_signed( "front.example", 30, 4 ).value();
        store.default_entry = { front.first, front.second };
        store.named.emplace( "video.example", CertEntry{ evil.first, evil.second } );

        ClientConfig cc = test::masked_client_config();
        ServerConfig sc;
        sc.store    = std::make_shared<const CertStore>( std::move( store ) );
        sc.rng_seed = 5;

        auto run = run_handshakes( cc, sc );
        REQUIRE_FALSE( run.ok() );
        CHECK( run.code() == Err::certificate_rejected );
    }
    SECTION( "front-name pin applies to the first handshake" )
    {
        ClientConfig cc      = test::masked_client_config();
        cc.expect_front_name = "front.example";
        auto ok              = establish_masked_channel( cc, test::default_server_config() );
        CHECK( ok.ok() );

        cc.expect_front_name = "someone-else.example";
        auto bad             = establish_masked_channel( cc, test::default_server_config() );
        REQUIRE_FALSE( bad.ok() );
        CHECK( bad.code() == Err::certificate_rejected );
    }
    SECTION( "expired default certificate refuses to serve" )
    {
        auto      old = generate_self_signed( "front.example", 1, 6, 1000000 ).value();
        CertStore store;
        store.default_entry = { old.first, old.second };
        ServerConfig sc;
        sc.store = std::make_shared<const CertStore>( std::move( store ) );
        auto r   = ServerConnection::create( sc );
        REQUIRE_FALSE( r.ok() );
        CHECK( r.code() == Err::missing_default_certificate );
    }
    SECTION( "unknown target name yields unrecognized_name at the server" )
    {
        ClientConfig cc = test::masked_client_config( "missing.example" );
        auto         run = run_handshakes( cc, test::default_server_config() );
        REQUIRE_FALSE( run.ok() );
        CHECK( run.code() == Err::handshake_failure );
    }
}

TEST_CASE( "state machine ordering violations" )
{
    SECTION( "ClientKeyExchange before ClientHello" )
    {
        auto server = ServerConnection::create( test::default_server_config() ).value();
        auto cke    = encode_handshake( HandshakeMessage( ClientKeyExchange{ Bytes( 32, 1 ) } ) );
        auto r      = server.step(
                     RecordFrame{ ContentType::handshake, kVersionTls12, cke.value() } );
        REQUIRE_FALSE( r.ok() );
        CHECK( r.code() == Err::protocol_violation );
        CHECK( server.take_alert_to_send().has_value() );
    }
    SECTION( "unexpected message at the client" )
    {
        auto client = ClientConnection::create( test::masked_client_config() ).value();
        REQUIRE( client.step( std::nullopt ).ok() );
        auto fin = encode_handshake( HandshakeMessage( Finished{} ) );
        auto r   = client.step( RecordFrame{ ContentType::handshake, kVersionTls12, fin.value() } );
        REQUIRE_FALSE( r.ok() );
        CHECK( r.code() == Err::protocol_violation );
    }
    SECTION( "record version is pinned" )
    {
        auto server = ServerConnection::create( test::default_server_config() ).value();
        RecordFrame frame{ ContentType::handshake, ProtocolVersion{ 3, 1 }, Bytes{ 1, 0, 0, 0 } };
        auto        r = server.step( frame );
        REQUIRE_FALSE( r.ok() );
        CHECK( r.code() == Err::protocol_violation );
    }
}

TEST_CASE( "resumption guard" )
{
    SECTION( "decision table" )
    {
        auto video = SniValue::parse( "video.example" ).value();
        CHECK( resumption_guard( HandshakePhase::first_complete, video, true )
                == ResumptionDecision::accept );
        CHECK( resumption_guard( HandshakePhase::first_complete, std::nullopt, false )
                == ResumptionDecision::reject );
        CHECK( resumption_guard( HandshakePhase::second_complete, video, true )
                == ResumptionDecision::reject );
    }
    SECTION( "sealed second hello with a different name is accepted" )
    {
        // every masked run exercises this: target differs from the default
        // certificate subject
        auto run = establish_masked_channel( test::masked_client_config(),
                test::default_server_config() );
        REQUIRE( run.ok() );
        CHECK( run.value().server.established_sni()->host() == "video.example" );
    }
    SECTION( "plaintext hello after phase 1 is rejected" )
    {
        auto pump = ManualPump::start( test::masked_client_config(),
                test::default_server_config() );
        pump.run_until( [&] { return pump.server.phase() == HandshakePhase::first_complete; } );
        REQUIRE( pump.server.phase() == HandshakePhase::first_complete );

        ClientHello ch;
        ch.cipher_suites = { kSuiteReal };
        ch.extensions.push_back( encode_sni_extension( "video.example" ).value() );
        auto raw = encode_handshake( HandshakeMessage( ch ) ).value();
        auto r   = pump.server.step( RecordFrame{ ContentType::handshake, kVersionTls12, raw } );
        REQUIRE_FALSE( r.ok() );
        CHECK( r.code() == Err::protocol_violation );
    }
    SECTION( "no third handshake even inside the channel" )
    {
        auto run = establish_masked_channel( test::masked_client_config(),
                test::default_server_config() )
                           .value();
        ClientHello ch;
        ch.cipher_suites = { kSuiteReal };
        ch.extensions.push_back( encode_sni_extension( "video.example" ).value() );
        auto        raw = encode_handshake( HandshakeMessage( ch ) ).value();
        ChannelKeys keys = *run.client.active_keys();
        auto        sealed = seal_record( keys, Direction::client_to_server,
                       RecordFrame{ ContentType::handshake, kVersionTls12, raw } );
        REQUIRE( sealed.ok() );
        auto r = run.server.step( sealed.value() );
        REQUIRE_FALSE( r.ok() );
        CHECK( r.code() == Err::protocol_violation );
    }
}

TEST_CASE( "legacy fallback return cause" )
{
    SECTION( "decision function" )
    {
        ServerConfig legacy_only = test::default_server_config();
        legacy_only.legacy_only  = true;

        ClientHello no_sni;
        auto        alert = legacy_fallback( legacy_only, no_sni );
        REQUIRE( alert.has_value() );
        CHECK( alert->level == AlertLevel::warning );
        CHECK( alert->code == kAlertMaskedUnsupported );

        ClientHello with_sni;
        with_sni.extensions.push_back( encode_sni_extension( "video.example" ).value() );
        CHECK_FALSE( legacy_fallback( legacy_only, with_sni ).has_value() );

        ServerConfig modern = test::default_server_config();
        CHECK_FALSE( legacy_fallback( modern, no_sni ).has_value() );
    }
    SECTION( "masked client falls back and completes a legacy handshake" )
    {
        ClientConfig cc = test::masked_client_config();
        ServerConfig sc = test::default_server_config();
        sc.legacy_only  = true;

        WireLog log;
        auto    run = run_handshakes( cc, sc, &log );
        REQUIRE( run.ok() );
        CHECK( run.value().client.fallback_used() );
        CHECK( run.value().client.phase() == HandshakePhase::first_complete );
        CHECK( run.value().client.handshakes_completed() == 1 );
        CHECK( run.value().client.established_sni()->host() == "video.example" );

        // the warning alert and then a plaintext SNI are on the wire
        bool saw_fallback_alert = false;
        for( const auto& [dir, frame] : log.frames() )
            if( frame.content_type == ContentType::alert
                    && frame.payload == Bytes{ 0x01, kAlertMaskedUnsupported } )
                saw_fallback_alert = true;
        CHECK( saw_fallback_alert );
        CHECK( count_plaintext_client_hellos( log ) == 2 );
        CHECK( count_plaintext_sni_extensions( log ) == 1 );
        CHECK( contains_bytes( log.concat(), "video.example" ) );
    }
    SECTION( "legacy client is served by a legacy-only server without the alert" )
    {
        ClientConfig cc = test::masked_client_config();
        cc.mode         = ClientMode::legacy;
        ServerConfig sc = test::default_server_config();
        sc.legacy_only  = true;

        WireLog log;
        auto    run = run_handshakes( cc, sc, &log );
        REQUIRE( run.ok() );
        CHECK( run.value().client.established_sni()->host() == "video.example" );
        for( const auto& [dir, frame] : log.frames() )
            CHECK( frame.content_type != ContentType::alert );
    }
}

TEST_CASE( "in-flight tampering always aborts the handshake" )
{
    test::Rng rng( 777 );
    for( int trial = 0; trial < 200; ++trial )
    {
        const std::uint64_t seed         = rng();
        const std::size_t   target_index = test::random_size( rng, 17 );
        const std::size_t   target_bit   = test::random_size( rng, 200 );
        bool                tampered     = false;

        ClientConfig cc = test::masked_client_config( "video.example", seed );
        ServerConfig sc = test::default_server_config( seed + 1 );

        auto hook = [&]( Direction, std::size_t index, Bytes& bytes )
        {
            if( index == target_index && !tampered )
            {
                const std::size_t bit = target_bit % ( bytes.size() * 8 );
                bytes[bit / 8] ^= static_cast<std::uint8_t>( 1u << ( bit % 8 ) );
                tampered = true;
            }
        };
        auto run = run_handshakes( cc, sc, nullptr, hook );
        INFO( "trial " << trial << " frame " << target_index << " bit " << target_bit );
        REQUIRE( tampered );
        REQUIRE_FALSE( run.ok() );
    }
}

TEST_CASE( "runs are reproducible given seeds" )
{
    WireLog a;
    WireLog b;
    REQUIRE( establish_masked_channel( test::masked_client_config( "video.example", 42 ),
            test::default_server_config( 43 ), &a )
                     .ok() );
    REQUIRE( establish_masked_channel( test::masked_client_config( "video.example", 42 ),
            test::default_server_config( 43 ), &b )
                     .ok() );
    REQUIRE( a.items.size() == b.items.size() );
    for( std::size_t i = 0; i < a.items.size(); ++i )
        CHECK( a.items[i].bytes == b.items[i].bytes );
}
