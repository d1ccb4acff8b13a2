/*
 * Copyright 2026 The veil authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include <random>
#include <string>

#include <veil/certs.hpp>
#include <veil/handshake.hpp>
#include <veil/wire.hpp>

namespace veil::test
{

using Rng = std::mt19937_64;

inline Bytes random_bytes( Rng& rng, std::size_t n )
{
    Bytes out( n );
    for( auto& b : out )
        b = static_cast<std::uint8_t>( rng() );
    return out;
}

inline std::size_t random_size( Rng& rng, std::size_t max_inclusive )
{
    return std::uniform_int_distribution<std::size_t>( 0, max_inclusive )( rng );
}

inline std::string random_host( Rng& rng )
{
    static constexpr char alphabet[] = "abcdefghijklmnopqrstuvwxyz0123456789-";
    const std::size_t     len        = 1 + random_size( rng, 20 );
    std::string           label;
    for( std::size_t i = 0; i < len; ++i )
        label.push_back( alphabet[random_size( rng, sizeof( alphabet ) - 2 )] );
    std::string host = label + ".example";
    // dodge the rare all-digit label that scans as an address
    if( !SniValue::parse( host ).ok() )
        host = "h" + host;
    return host;
}

inline SniValue random_sni( Rng& rng )
{
    return SniValue::parse( random_host( rng ) ).value();
}

inline RecordFrame random_record( Rng& rng )
{
    static constexpr ContentType types[] = { ContentType::change_cipher_spec,
        ContentType::alert, ContentType::handshake, ContentType::application_data };
    RecordFrame frame;
    frame.content_type = types[random_size( rng, 3 )];
    frame.version      = ProtocolVersion{ static_cast<std::uint8_t>( rng() ),
             static_cast<std::uint8_t>( rng() ) };
    frame.payload      = random_bytes( rng, random_size( rng, 2048 ) );
    return frame;
}

inline Extension random_extension( Rng& rng )
{
    if( rng() % 2 == 0 )
        return encode_sni_extension( random_sni( rng ) );
    Extension ext;
    ext.type = static_cast<std::uint16_t>( 1 + random_size( rng, 60000 ) );
    ext.data = random_bytes( rng, random_size( rng, 64 ) );
    return ext;
}

inline HandshakeMessage random_handshake_message( Rng& rng )
{
    switch( rng() % 6 )
    {
        case 0:
        {
            ClientHello ch;
            std::ranges::generate( ch.random, [&] { return static_cast<std::uint8_t>( rng() ); } );
            ch.session_id = random_bytes( rng, random_size( rng, 32 ) );
            const std::size_t n_suites = random_size( rng, 6 );
            for( std::size_t i = 0; i < n_suites; ++i )
                ch.cipher_suites.push_back( static_cast<CipherSuiteId>( rng() ) );
            const std::size_t n_ext = random_size( rng, 3 );
            for( std::size_t i = 0; i < n_ext; ++i )
                ch.extensions.push_back( random_extension( rng ) );
            return ch;
        }
        case 1:
        {
            ServerHello sh;
            std::ranges::generate( sh.random, [&] { return static_cast<std::uint8_t>( rng() ); } );
            sh.session_id   = random_bytes( rng, random_size( rng, 32 ) );
            sh.chosen_suite = static_cast<CipherSuiteId>( rng() );
            const std::size_t n_ext = random_size( rng, 3 );
            for( std::size_t i = 0; i < n_ext; ++i )
                sh.extensions.push_back( random_extension( rng ) );
            return sh;
        }
        case 2:
            return CertificatePayload{ random_bytes( rng, random_size( rng, 512 ) ) };
        case 3:
            return ServerHelloDone{};
        case 4:
            return ClientKeyExchange{ random_bytes( rng, random_size( rng, 64 ) ) };
        default:
        {
            Finished fin;
            std::ranges::generate( fin.verify_data,
                    [&] { return static_cast<std::uint8_t>( rng() ); } );
            return fin;
        }
    }
}

/// Store fixture mirroring the two-certificate validation setup.
inline std::shared_ptr<const CertStore> demo_store( std::uint64_t seed = 7,
        std::optional<std::int64_t> now = {} )
{
    auto front = generate_self_signed( "front.example", 30, seed, now );
    auto video = generate_self_signed( "video.example", 30, seed + 1, now );
    CertStore store;
    store.default_entry = CertEntry{ front.value().first, front.value().second };
    store.named.emplace( "video.example",
            CertEntry{ video.value().first, video.value().second } );
    return std::make_shared<const CertStore>( std::move( store ) );
}

inline ClientConfig masked_client_config( const std::string& target = "video.example",
        std::uint64_t seed = 11 )
{
    ClientConfig cfg;
    cfg.target_sni = SniValue::parse( target ).value();
    cfg.mode       = ClientMode::masked;
    cfg.rng_seed   = seed;
    return cfg;
}

inline ServerConfig default_server_config( std::uint64_t seed = 13 )
{
    ServerConfig cfg;
    cfg.store    = demo_store();
    cfg.rng_seed = seed;
    return cfg;
}

} // namespace veil::test
