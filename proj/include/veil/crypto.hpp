/*
 * Copyright 2026 The veil authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>

#include <sodium.h>

#include <veil/bytes.hpp>
#include <veil/result.hpp>
#include <veil/rng.hpp>
#include <veil/wire.hpp>

namespace veil
{

/*
 * Suite registry (see README):
 *   0x0001  X25519 key agreement, ChaCha20-Poly1305 record protection,
 *           HMAC-SHA256 key schedule, Ed25519 signatures
 *   0x00FF  null suite: zero shared secret, constant keys, identity
 *           record transform — deterministic plaintext traces for tests
 *
 * Signatures are Ed25519 under both suites, so certificates carry no
 * suite marker and the same key pair signs and key-agrees.
 */

inline bool suite_known( CipherSuiteId id ) noexcept
{
    return id == kSuiteReal || id == kSuiteNull;
}

struct KeyPair
{
    CipherSuiteId suite = kSuiteReal;
    Bytes         private_part; // Ed25519 secret key, never serialized to the wire
    Bytes         public_part;  // Ed25519 public key, 32 bytes

    bool operator==( const KeyPair& ) const = default;
};

enum class Direction
{
    client_to_server,
    server_to_client,
};

struct ChannelKeys
{
    CipherSuiteId suite = kSuiteReal;
    Bytes         client_write_key;
    Bytes         server_write_key;
    Bytes         client_iv;
    Bytes         server_iv;
    std::uint64_t client_seq = 0;
    std::uint64_t server_seq = 0;

    bool operator==( const ChannelKeys& ) const = default;
};

/// Ordered concatenation of the handshake messages exchanged in the
/// current handshake phase; hashed into the key schedule and Finished.
class Transcript
{
public:
    void append( ByteView msg ) { m_data.insert( m_data.end(), msg.begin(), msg.end() ); }
    void reset() { m_data.clear(); }

    [[nodiscard]] std::array<std::uint8_t, 32> hash() const
    {
        std::array<std::uint8_t, 32> out{};
        crypto_hash_sha256( out.data(), m_data.data(), m_data.size() );
        return out;
    }
    [[nodiscard]] const Bytes& bytes() const noexcept { return m_data; }
    [[nodiscard]] bool empty() const noexcept { return m_data.empty(); }

private:
    Bytes m_data;
};

namespace detail
{

inline std::array<std::uint8_t, 32> sha256( ByteView data )
{
    std::array<std::uint8_t, 32> out{};
    crypto_hash_sha256( out.data(), data.data(), data.size() );
    return out;
}

inline std::array<std::uint8_t, 32> hmac_sha256( ByteView key, ByteView msg )
{
    std::array<std::uint8_t, 32>  out{};
    crypto_auth_hmacsha256_state state;
    crypto_auth_hmacsha256_init( &state, key.data(), key.size() );
    crypto_auth_hmacsha256_update( &state, msg.data(), msg.size() );
    crypto_auth_hmacsha256_final( &state, out.data() );
    return out;
}

/// HKDF over HMAC-SHA256 (RFC 5869).
inline Bytes hkdf( ByteView salt, ByteView ikm, ByteView info, std::size_t out_len )
{
    const auto prk = hmac_sha256( salt, ikm );
    Bytes out;
    out.reserve( out_len );
    Bytes        block;
    std::uint8_t counter = 1;
    while( out.size() < out_len )
    {
        Bytes t = block;
        t.insert( t.end(), info.begin(), info.end() );
        t.push_back( counter++ );
        const auto digest = hmac_sha256( ByteView( prk ), t );
        block.assign( digest.begin(), digest.end() );
        out.insert( out.end(), block.begin(), block.end() );
    }
    out.resize( out_len );
    return out;
}

} // namespace detail

inline Result<KeyPair> keypair_generate( CipherSuiteId suite, DetRng& rng )
{
    if( !suite_known( suite ) )
        return Error{ Err::unknown_suite, "suite 0x" + to_hex( Bytes{
                static_cast<std::uint8_t>( suite >> 8 ), static_cast<std::uint8_t>( suite ) } ) };
    std::array<std::uint8_t, crypto_sign_SEEDBYTES> seed{};
    rng.fill( seed );
    KeyPair kp;
    kp.suite = suite;
    kp.private_part.resize( crypto_sign_SECRETKEYBYTES );
    kp.public_part.resize( crypto_sign_PUBLICKEYBYTES );
    crypto_sign_seed_keypair( kp.public_part.data(), kp.private_part.data(), seed.data() );
    return kp;
}

inline Result<KeyPair> keypair_generate( CipherSuiteId suite,
        std::optional<std::uint64_t> rng_seed = {} )
{
    DetRng rng( rng_seed );
    return keypair_generate( suite, rng );
}

/// ECDH between my key pair and the peer's public value. Symmetric:
/// both sides of a pair compute the same 32-byte secret.
inline Result<Bytes> shared_secret( const KeyPair& mine, ByteView their_public )
{
    if( their_public.size() != crypto_sign_PUBLICKEYBYTES )
        return Error{ Err::malformed_public_value,
                "expected 32 bytes, got " + std::to_string( their_public.size() ) };
    if( mine.suite == kSuiteNull )
        return Bytes( 32, 0x00 );
    if( mine.suite != kSuiteReal )
        return Error{ Err::unknown_suite, "key agreement" };

    std::array<std::uint8_t, crypto_scalarmult_curve25519_BYTES> my_scalar{};
    std::array<std::uint8_t, crypto_scalarmult_curve25519_BYTES> their_point{};
    if( crypto_sign_ed25519_sk_to_curve25519( my_scalar.data(), mine.private_part.data() ) != 0 )
        return Error{ Err::malformed_public_value, "private key conversion failed" };
    if( crypto_sign_ed25519_pk_to_curve25519( their_point.data(), their_public.data() ) != 0 )
        return Error{ Err::malformed_public_value, "peer key not on curve" };
    Bytes secret( crypto_scalarmult_curve25519_BYTES );
    if( crypto_scalarmult_curve25519( secret.data(), my_scalar.data(), their_point.data() ) != 0 )
        return Error{ Err::malformed_public_value, "low-order peer key" };
    return secret;
}

inline constexpr std::size_t kAeadKeyBytes   = 32;
inline constexpr std::size_t kAeadIvBytes    = 12;
inline constexpr std::size_t kAeadTagBytes   = 16;
inline constexpr std::size_t kSealedOverhead = kAeadTagBytes + 1; // tag + inner type byte
/// Largest plaintext payload that still seals into one record.
inline constexpr std::size_t kMaxSealablePayload = kMaxRecordPayload - kSealedOverhead;

/// Channel key schedule: binds the shared secret, both hello randoms and
/// the transcript hash. Null suite yields fixed, documented constants.
inline Result<ChannelKeys> derive_channel_keys( CipherSuiteId suite, ByteView secret,
        ByteView transcript_hash, ByteView client_random, ByteView server_random )
{
    if( !suite_known( suite ) )
        return Error{ Err::unknown_suite, "key derivation" };
    ChannelKeys keys;
    keys.suite = suite;
    if( suite == kSuiteNull )
    {
        keys.client_write_key.assign( kAeadKeyBytes, 0x11 );
        keys.server_write_key.assign( kAeadKeyBytes, 0x22 );
        keys.client_iv.assign( kAeadIvBytes, 0x33 );
        keys.server_iv.assign( kAeadIvBytes, 0x44 );
        return keys;
    }
    Bytes salt;
    salt.insert( salt.end(), client_random.begin(), client_random.end() );
    salt.insert( salt.end(), server_random.begin(), server_random.end() );
    Bytes info = to_bytes( "veil channel keys" );
    info.insert( info.end(), transcript_hash.begin(), transcript_hash.end() );
    Bytes okm = detail::hkdf( salt, secret, info, 2 * kAeadKeyBytes + 2 * kAeadIvBytes );
    auto  at  = okm.begin();
    keys.client_write_key.assign( at, at + kAeadKeyBytes );
    at += kAeadKeyBytes;
    keys.server_write_key.assign( at, at + kAeadKeyBytes );
    at += kAeadKeyBytes;
    keys.client_iv.assign( at, at + kAeadIvBytes );
    at += kAeadIvBytes;
    keys.server_iv.assign( at, at + kAeadIvBytes );
    return keys;
}

namespace detail
{

inline Bytes& write_key( ChannelKeys& keys, Direction dir )
{
    return dir == Direction::client_to_server ? keys.client_write_key : keys.server_write_key;
}
inline Bytes& write_iv( ChannelKeys& keys, Direction dir )
{
    return dir == Direction::client_to_server ? keys.client_iv : keys.server_iv;
}
inline std::uint64_t& seq_counter( ChannelKeys& keys, Direction dir )
{
    return dir == Direction::client_to_server ? keys.client_seq : keys.server_seq;
}

inline std::array<std::uint8_t, kAeadIvBytes> seal_nonce( ByteView iv, std::uint64_t seq )
{
    std::array<std::uint8_t, kAeadIvBytes> nonce{};
    std::copy( iv.begin(), iv.end(), nonce.begin() );
    for( int i = 0; i < 8; ++i )
        nonce[kAeadIvBytes - 1 - i] ^= static_cast<std::uint8_t>( seq >> ( 8 * i ) );
    return nonce;
}

inline Bytes seal_aad( std::uint64_t seq, std::size_t inner_len )
{
    ByteWriter w;
    w.u64( seq );
    w.u8( static_cast<std::uint8_t>( ContentType::application_data ) );
    w.u8( kVersionTls12.major );
    w.u8( kVersionTls12.minor );
    w.u16( static_cast<std::uint16_t>( inner_len ) );
    return w.take();
}

} // namespace detail

/// Protects one record for the wire. The output always carries outer
/// content type application_data so protected traffic, including in-tunnel
/// handshake records, is indistinguishable from bulk data. The original
/// content type rides as a trailing byte of the AEAD plaintext.
inline Result<RecordFrame> seal_record( ChannelKeys& keys, Direction dir,
        const RecordFrame& plaintext )
{
    std::uint64_t& seq = detail::seq_counter( keys, dir );
    if( seq == UINT64_MAX )
        return Error{ Err::sequence_exhausted, "write sequence exhausted" };
    if( plaintext.payload.size() > kMaxSealablePayload )
        return Error{ Err::payload_too_large, "payload too large to seal" };

    Bytes inner = plaintext.payload;
    inner.push_back( static_cast<std::uint8_t>( plaintext.content_type ) );

    RecordFrame out;
    out.content_type = ContentType::application_data;
    out.version      = kVersionTls12;
    if( keys.suite == kSuiteNull )
    {
        out.payload = std::move( inner );
        ++seq;
        return out;
    }
    const auto nonce = detail::seal_nonce( detail::write_iv( keys, dir ), seq );
    const Bytes aad  = detail::seal_aad( seq, inner.size() );
    out.payload.resize( inner.size() + kAeadTagBytes );
    unsigned long long ct_len = 0;
    crypto_aead_chacha20poly1305_ietf_encrypt( out.payload.data(), &ct_len, inner.data(),
            inner.size(), aad.data(), aad.size(), nullptr, nonce.data(),
            detail::write_key( keys, dir ).data() );
    out.payload.resize( ct_len );
    ++seq;
    return out;
}

/// Inverse of seal_record at the receiver's replica of the keys. Any
/// tampering with ciphertext, header or delivery order fails closed.
inline Result<RecordFrame> open_record( ChannelKeys& keys, Direction dir,
        const RecordFrame& wire )
{
    if( wire.content_type != ContentType::application_data )
        return Error{ Err::auth_failure, "sealed record must be application_data" };
    std::uint64_t& seq = detail::seq_counter( keys, dir );
    if( seq == UINT64_MAX )
        return Error{ Err::sequence_exhausted, "read sequence exhausted" };

    Bytes inner;
    if( keys.suite == kSuiteNull )
    {
        if( wire.payload.empty() )
            return Error{ Err::auth_failure, "empty sealed payload" };
        inner = wire.payload;
    }
    else
    {
        if( wire.payload.size() < kAeadTagBytes + 1 )
            return Error{ Err::auth_failure, "sealed payload too short" };
        const auto  nonce = detail::seal_nonce( detail::write_iv( keys, dir ), seq );
        const Bytes aad   = detail::seal_aad( seq, wire.payload.size() - kAeadTagBytes );
        inner.resize( wire.payload.size() - kAeadTagBytes );
        unsigned long long pt_len = 0;
        if( crypto_aead_chacha20poly1305_ietf_decrypt( inner.data(), &pt_len, nullptr,
                    wire.payload.data(), wire.payload.size(), aad.data(), aad.size(),
                    nonce.data(), detail::write_key( keys, dir ).data() )
                != 0 )
            return Error{ Err::auth_failure, "record authentication failed" };
        inner.resize( pt_len );
    }
    const std::uint8_t inner_type = inner.back();
    inner.pop_back();
    if( !content_type_known( inner_type ) )
        return Error{ Err::auth_failure, "invalid inner content type" };
    ++seq;
    RecordFrame out;
    out.content_type = static_cast<ContentType>( inner_type );
    out.version      = kVersionTls12;
    out.payload      = std::move( inner );
    return out;
}

inline Bytes sign( const KeyPair& keypair, ByteView message )
{
    Bytes sig( crypto_sign_BYTES );
    crypto_sign_detached( sig.data(), nullptr, message.data(), message.size(),
            keypair.private_part.data() );
    return sig;
}

/// Never throws: malformed inputs verify as false.
inline bool verify( ByteView public_part, ByteView message, ByteView signature ) noexcept
{
    if( public_part.size() != crypto_sign_PUBLICKEYBYTES || signature.size() != crypto_sign_BYTES )
        return false;
    return crypto_sign_verify_detached( signature.data(), message.data(), message.size(),
                   public_part.data() )
            == 0;
}

/// Finished.verify_data: 12 bytes binding the shared secret (real suite)
/// and the transcript at the sender's point in the flight sequence.
inline std::array<std::uint8_t, 12> finished_verify_data( CipherSuiteId suite, ByteView secret,
        ByteView transcript_hash, bool from_client )
{
    const std::string_view label =
            from_client ? std::string_view( "client finished" ) : std::string_view( "server finished" );
    Bytes msg = to_bytes( label );
    msg.insert( msg.end(), transcript_hash.begin(), transcript_hash.end() );
    std::array<std::uint8_t, 32> digest{};
    if( suite == kSuiteNull )
        digest = detail::sha256( msg );
    else
        digest = detail::hmac_sha256( secret, msg );
    std::array<std::uint8_t, 12> out{};
    std::copy( digest.begin(), digest.begin() + 12, out.begin() );
    return out;
}

} // namespace veil
