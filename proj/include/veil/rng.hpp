/*
 * Copyright 2026 The veil authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include <cstdint>
#include <optional>
#include <span>

#include <sodium.h>

#include <veil/bytes.hpp>

namespace veil
{

/// Random source for handshake randoms, session ids and key seeds.
/// Seeded instances produce a reproducible splitmix64 stream so whole
/// protocol runs can be replayed byte-for-byte; unseeded instances draw
/// from the system RNG.
class DetRng
{
public:
    DetRng() = default;
    explicit DetRng( std::uint64_t seed )
        : m_state( seed )
        , m_seeded( true )
    {}
    explicit DetRng( std::optional<std::uint64_t> seed )
    {
        if( seed )
        {
            m_state  = *seed;
            m_seeded = true;
        }
    }

    [[nodiscard]] bool seeded() const noexcept { return m_seeded; }

    void fill( std::span<std::uint8_t> out )
    {
        if( !m_seeded )
        {
            if( !out.empty() )
                randombytes_buf( out.data(), out.size() );
            return;
        }
        std::size_t i = 0;
        while( i < out.size() )
        {
            std::uint64_t word = next_word();
            for( int shift = 56; shift >= 0 && i < out.size(); shift -= 8 )
                out[i++] = static_cast<std::uint8_t>( word >> shift );
        }
    }

    Bytes bytes( std::size_t n )
    {
        Bytes out( n );
        fill( out );
        return out;
    }

    std::uint64_t u64()
    {
        if( m_seeded )
            return next_word();
        std::uint64_t v = 0;
        randombytes_buf( &v, sizeof( v ) );
        return v;
    }

private:
    std::uint64_t next_word()
    {
        // splitmix64
        m_state += 0x9E3779B97F4A7C15ull;
        std::uint64_t z = m_state;
        z = ( z ^ ( z >> 30 ) ) * 0xBF58476D1CE4E5B9ull;
        z = ( z ^ ( z >> 27 ) ) * 0x94D049BB133111EBull;
        return z ^ ( z >> 31 );
    }

    std::uint64_t m_state  = 0;
    bool          m_seeded = false;
};

/// Process-wide libsodium init; safe to call repeatedly.
inline bool crypto_runtime_init()
{
    return sodium_init() >= 0;
}

} // namespace veil
