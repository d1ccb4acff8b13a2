/*
 * Copyright 2026 The veil authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include <algorithm>
#include <set>

#include <catch2/catch_amalgamated.hpp>

#include <veil/crypto.hpp>

#include "test_util.hpp"

using namespace veil;

namespace
{

ChannelKeys test_keys( CipherSuiteId suite, std::uint64_t salt = 1 )
{
    test::Rng rng( salt );
    Bytes     secret = test::random_bytes( rng, 32 );
    Bytes     th     = test::random_bytes( rng, 32 );
    Bytes     cr     = test::random_bytes( rng, 32 );
    Bytes     sr     = test::random_bytes( rng, 32 );
    return derive_channel_keys( suite, secret, th, cr, sr ).value();
}

} // namespace

TEST_CASE( "key pair generation" )
{
    REQUIRE( crypto_runtime_init() );

    SECTION( "same seed gives identical pairs" )
    {
        auto a = keypair_generate( kSuiteReal, 42 );
        auto b = keypair_generate( kSuiteReal, 42 );
        REQUIRE( a.ok() );
        REQUIRE( b.ok() );
        CHECK( a.value() == b.value() );
    }
    SECTION( "different seeds give distinct public parts" )
    {
        std::set<std::string> seen;
        for( std::uint64_t seed = 0; seed < 100; ++seed )
            seen.insert( to_hex( keypair_generate( kSuiteReal, seed ).value().public_part ) );
        CHECK( seen.size() == 100 );
    }
    SECTION( "unregistered suite id" )
    {
        CHECK( keypair_generate( 0x1234, 1 ).code() == Err::unknown_suite );
    }
    SECTION( "unseeded pairs are fresh" )
    {
        auto a = keypair_generate( kSuiteReal );
        auto b = keypair_generate( kSuiteReal );
        CHECK( a.value().public_part != b.value().public_part );
    }
}

TEST_CASE( "shared secret agreement" )
{
    SECTION( "both directions agree" )
    {
        auto a = keypair_generate( kSuiteReal, 1 ).value();
        auto b = keypair_generate( kSuiteReal, 2 ).value();
        auto s1 = shared_secret( a, b.public_part );
        auto s2 = shared_secret( b, a.public_part );
        REQUIRE( s1.ok() );
        REQUIRE( s2.ok() );
        CHECK( s1.value() == s2.value() );
        CHECK( s1.value().size() == 32 );
    }
    SECTION( "truncated public value" )
    {
        auto a   = keypair_generate( kSuiteReal, 1 ).value();
        auto bad = shared_secret( a, ByteView( a.public_part ).first( 16 ) );
        CHECK( bad.code() == Err::malformed_public_value );
    }
    SECTION( "null suite secret is the zero block" )
    {
        auto a = keypair_generate( kSuiteNull, 1 ).value();
        auto b = keypair_generate( kSuiteNull, 2 ).value();
        CHECK( shared_secret( a, b.public_part ).value() == Bytes( 32, 0x00 ) );
    }
    SECTION( "all-zero peer point is rejected" )
    {
        auto a = keypair_generate( kSuiteReal, 1 ).value();
        CHECK_FALSE( shared_secret( a, Bytes( 32, 0x00 ) ).ok() );
    }
}

TEST_CASE( "channel key derivation" )
{
    test::Rng rng( 7 );
    Bytes     secret = test::random_bytes( rng, 32 );
    Bytes     th     = test::random_bytes( rng, 32 );
    Bytes     cr     = test::random_bytes( rng, 32 );
    Bytes     sr     = test::random_bytes( rng, 32 );

    SECTION( "deterministic" )
    {
        auto a = derive_channel_keys( kSuiteReal, secret, th, cr, sr ).value();
        auto b = derive_channel_keys( kSuiteReal, secret, th, cr, sr ).value();
        CHECK( a == b );
        CHECK( a.client_seq == 0 );
        CHECK( a.server_seq == 0 );
        CHECK( a.client_write_key != a.server_write_key );
    }
    SECTION( "every single-bit flip of the secret changes the keys" )
    {
        const auto      base = derive_channel_keys( kSuiteReal, secret, th, cr, sr ).value();
        std::set<std::string> seen{ to_hex( base.client_write_key ) };
        for( int trial = 0; trial < 1000; ++trial )
        {
            Bytes             flipped = secret;
            const std::size_t bit     = test::random_size( rng, flipped.size() * 8 - 1 );
            flipped[bit / 8] ^= static_cast<std::uint8_t>( 1u << ( bit % 8 ) );
            auto keys = derive_channel_keys( kSuiteReal, flipped, th, cr, sr ).value();
            CHECK( keys.client_write_key != base.client_write_key );
            seen.insert( to_hex( keys.client_write_key ) );
        }
        CHECK( seen.size() > 32 ); // distinct flips do not collide either
    }
    SECTION( "transcript hash is bound" )
    {
        Bytes th2 = th;
        th2[0] ^= 1;
        CHECK( derive_channel_keys( kSuiteReal, secret, th, cr, sr ).value()
                != derive_channel_keys( kSuiteReal, secret, th2, cr, sr ).value() );
    }
    SECTION( "null suite keys are fixed constants" )
    {
        auto keys = derive_channel_keys( kSuiteNull, secret, th, cr, sr ).value();
        CHECK( keys.client_write_key == Bytes( 32, 0x11 ) );
        CHECK( keys.server_write_key == Bytes( 32, 0x22 ) );
        CHECK( keys.client_iv == Bytes( 12, 0x33 ) );
        CHECK( keys.server_iv == Bytes( 12, 0x44 ) );
    }
}

TEST_CASE( "record protection" )
{
    RecordFrame frame{ ContentType::handshake, kVersionTls12, to_bytes( "finished bytes" ) };

    SECTION( "seal then open round-trips and advances both replicas" )
    {
        ChannelKeys sender   = test_keys( kSuiteReal );
        ChannelKeys receiver = sender;
        auto        wire     = seal_record( sender, Direction::client_to_server, frame );
        REQUIRE( wire.ok() );
        CHECK( wire.value().content_type == ContentType::application_data );
        CHECK( sender.client_seq == 1 );

        auto back = open_record( receiver, Direction::client_to_server, wire.value() );
        REQUIRE( back.ok() );
        CHECK( back.value() == frame );
        CHECK( receiver.client_seq == 1 );
    }
    SECTION( "any ciphertext bit flip fails authentication" )
    {
        ChannelKeys sender   = test_keys( kSuiteReal );
        ChannelKeys receiver = sender;
        auto        wire     = seal_record( sender, Direction::client_to_server, frame ).value();
        for( std::size_t i = 0; i < wire.payload.size(); i += 3 )
        {
            RecordFrame tampered = wire;
            tampered.payload[i] ^= 0x40;
            ChannelKeys replica = receiver;
            CHECK( open_record( replica, Direction::client_to_server, tampered ).code()
                    == Err::auth_failure );
        }
    }
    SECTION( "wrong direction key fails" )
    {
        ChannelKeys sender   = test_keys( kSuiteReal );
        ChannelKeys receiver = sender;
        auto        wire     = seal_record( sender, Direction::client_to_server, frame ).value();
        CHECK( open_record( receiver, Direction::server_to_client, wire ).code()
                == Err::auth_failure );
    }
    SECTION( "out-of-order records fail" )
    {
        ChannelKeys sender   = test_keys( kSuiteReal );
        ChannelKeys receiver = sender;
        auto        first    = seal_record( sender, Direction::client_to_server, frame ).value();
        auto        second   = seal_record( sender, Direction::client_to_server, frame ).value();
        CHECK( open_record( receiver, Direction::client_to_server, second ).code()
                == Err::auth_failure );
        // in-order still fine on a fresh replica
        ChannelKeys replay = test_keys( kSuiteReal );
        CHECK( open_record( replay, Direction::client_to_server, first ).ok() );
        CHECK( open_record( replay, Direction::client_to_server, second ).ok() );
    }
    SECTION( "exhausted sequence counter is refused" )
    {
        ChannelKeys keys = test_keys( kSuiteReal );
        keys.client_seq  = UINT64_MAX;
        CHECK( seal_record( keys, Direction::client_to_server, frame ).code()
                == Err::sequence_exhausted );
    }
    SECTION( "oversized payload will not seal" )
    {
        ChannelKeys keys = test_keys( kSuiteReal );
        RecordFrame big{ ContentType::application_data, kVersionTls12,
            Bytes( kMaxSealablePayload + 1, 0 ) };
        CHECK( seal_record( keys, Direction::client_to_server, big ).code()
                == Err::payload_too_large );
        big.payload.resize( kMaxSealablePayload );
        auto wire = seal_record( keys, Direction::client_to_server, big );
        REQUIRE( wire.ok() );
        CHECK( wire.value().payload.size() <= kMaxRecordPayload );
    }
    SECTION( "null suite is the identity transform" )
    {
        ChannelKeys sender   = test_keys( kSuiteNull );
        ChannelKeys receiver = sender;
        auto        wire     = seal_record( sender, Direction::client_to_server, frame ).value();
        CHECK( wire.content_type == ContentType::application_data );
        Bytes expected = frame.payload;
        expected.push_back( static_cast<std::uint8_t>( frame.content_type ) );
        CHECK( wire.payload == expected );
        CHECK( open_record( receiver, Direction::client_to_server, wire ).value() == frame );
    }
}

TEST_CASE( "record protection properties over random frames" )
{
    test::Rng rng( 31337 );
    for( int trial = 0; trial < 300; ++trial )
    {
        RecordFrame frame;
        frame.content_type = ContentType::handshake;
        frame.payload      = test::random_bytes( rng, 16 + test::random_size( rng, 512 ) );

        ChannelKeys sender   = test_keys( kSuiteReal, rng() );
        ChannelKeys receiver = sender;
        const auto  dir = rng() % 2 == 0 ? Direction::client_to_server : Direction::server_to_client;
        auto        wire = seal_record( sender, dir, frame ).value();

        // ciphertext differs from the plaintext payload and does not
        // contain it as a contiguous substring
        REQUIRE( wire.payload != frame.payload );
        auto hit = std::search( wire.payload.begin(), wire.payload.end(), frame.payload.begin(),
                frame.payload.end() );
        REQUIRE( hit == wire.payload.end() );

        auto back = open_record( receiver, dir, wire );
        REQUIRE( back.ok() );
        REQUIRE( back.value() == frame );
    }
}

TEST_CASE( "signatures" )
{
    auto  kp  = keypair_generate( kSuiteReal, 5 ).value();
    Bytes msg = to_bytes( "certificate to be signed" );

    SECTION( "round-trip verifies" )
    {
        CHECK( verify( kp.public_part, msg, sign( kp, msg ) ) );
    }
    SECTION( "different message fails" )
    {
        Bytes sig   = sign( kp, msg );
        Bytes other = to_bytes( "certificate to be signed!" );
        CHECK_FALSE( verify( kp.public_part, other, sig ) );
    }
    SECTION( "different key fails" )
    {
        auto other = keypair_generate( kSuiteReal, 6 ).value();
        CHECK_FALSE( verify( other.public_part, msg, sign( kp, msg ) ) );
    }
    SECTION( "single bit flips in message or signature fail" )
    {
        Bytes sig = sign( kp, msg );
        for( std::size_t i = 0; i < sig.size(); i += 7 )
        {
            Bytes bad = sig;
            bad[i] ^= 1;
            CHECK_FALSE( verify( kp.public_part, msg, bad ) );
        }
        Bytes bad_msg = msg;
        bad_msg[0] ^= 1;
        CHECK_FALSE( verify( kp.public_part, bad_msg, sig ) );
    }
    SECTION( "malformed inputs return false without throwing" )
    {
        CHECK_FALSE( verify( kp.public_part, msg, Bytes{} ) );
        CHECK_FALSE( verify( Bytes{ 1, 2, 3 }, msg, sign( kp, msg ) ) );
        CHECK_FALSE( verify( kp.public_part, msg, Bytes( 64, 0xFF ) ) );
    }
}

TEST_CASE( "finished verify data binds role, secret and transcript" )
{
    test::Rng rng( 55 );
    Bytes     secret = test::random_bytes( rng, 32 );
    Bytes     th     = test::random_bytes( rng, 32 );

    auto client = finished_verify_data( kSuiteReal, secret, th, true );
    auto server = finished_verify_data( kSuiteReal, secret, th, false );
    CHECK( client != server );
    CHECK( client == finished_verify_data( kSuiteReal, secret, th, true ) );

    Bytes other_secret = secret;
    other_secret[0] ^= 1;
    CHECK( finished_verify_data( kSuiteReal, other_secret, th, true ) != client );

    Bytes other_th = th;
    other_th[31] ^= 1;
    CHECK( finished_verify_data( kSuiteReal, secret, other_th, true ) != client );
}
