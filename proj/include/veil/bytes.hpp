/*
 * Copyright 2026 The veil authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace veil
{

using Bytes    = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

inline Bytes to_bytes( std::string_view s )
{
    return Bytes( s.begin(), s.end() );
}

inline std::string to_string( ByteView b )
{
    return std::string( b.begin(), b.end() );
}

inline std::string to_hex( ByteView data )
{
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve( data.size() * 2 );
    for( std::uint8_t b : data )
    {
        out.push_back( digits[b >> 4] );
        out.push_back( digits[b & 0x0F] );
    }
    return out;
}

inline std::optional<Bytes> from_hex( std::string_view hex )
{
    auto nibble = []( char c ) -> int
    {
        if( c >= '0' && c <= '9' ) return c - '0';
        if( c >= 'a' && c <= 'f' ) return c - 'a' + 10;
        if( c >= 'A' && c <= 'F' ) return c - 'A' + 10;
        return -1;
    };
    if( hex.size() % 2 != 0 )
        return std::nullopt;
    Bytes out;
    out.reserve( hex.size() / 2 );
    for( std::size_t i = 0; i < hex.size(); i += 2 )
    {
        int hi = nibble( hex[i] );
        int lo = nibble( hex[i + 1] );
        if( hi < 0 || lo < 0 )
            return std::nullopt;
        out.push_back( static_cast<std::uint8_t>( ( hi << 4 ) | lo ) );
    }
    return out;
}

/// Big-endian serializer for the wire formats.
class ByteWriter
{
public:
    void u8( std::uint8_t v ) { m_buf.push_back( v ); }
    void u16( std::uint16_t v )
    {
        m_buf.push_back( static_cast<std::uint8_t>( v >> 8 ) );
        m_buf.push_back( static_cast<std::uint8_t>( v ) );
    }
    void u24( std::uint32_t v )
    {
        m_buf.push_back( static_cast<std::uint8_t>( v >> 16 ) );
        m_buf.push_back( static_cast<std::uint8_t>( v >> 8 ) );
        m_buf.push_back( static_cast<std::uint8_t>( v ) );
    }
    void u64( std::uint64_t v )
    {
        for( int shift = 56; shift >= 0; shift -= 8 )
            m_buf.push_back( static_cast<std::uint8_t>( v >> shift ) );
    }
    void bytes( ByteView data ) { m_buf.insert( m_buf.end(), data.begin(), data.end() ); }

    [[nodiscard]] std::size_t size() const noexcept { return m_buf.size(); }
    [[nodiscard]] Bytes take() { return std::move( m_buf ); }
    [[nodiscard]] const Bytes& data() const noexcept { return m_buf; }

private:
    Bytes m_buf;
};

/// Error-latching big-endian reader: reads past the end leave zeros and set
/// the failure flag, checked once at the end of a parse.
class ByteReader
{
public:
    explicit ByteReader( ByteView data )
        : m_data( data )
    {}

    std::uint8_t u8()
    {
        if( !need( 1 ) )
            return 0;
        return m_data[m_pos++];
    }
    std::uint16_t u16()
    {
        if( !need( 2 ) )
            return 0;
        std::uint16_t v = static_cast<std::uint16_t>( m_data[m_pos] << 8 ) | m_data[m_pos + 1];
        m_pos += 2;
        return v;
    }
    std::uint32_t u24()
    {
        if( !need( 3 ) )
            return 0;
        std::uint32_t v = ( std::uint32_t( m_data[m_pos] ) << 16 )
                | ( std::uint32_t( m_data[m_pos + 1] ) << 8 ) | m_data[m_pos + 2];
        m_pos += 3;
        return v;
    }
    Bytes bytes( std::size_t n )
    {
        if( !need( n ) )
            return {};
        Bytes out( m_data.begin() + m_pos, m_data.begin() + m_pos + n );
        m_pos += n;
        return out;
    }
    ByteView view( std::size_t n )
    {
        if( !need( n ) )
            return {};
        ByteView out = m_data.subspan( m_pos, n );
        m_pos += n;
        return out;
    }

    [[nodiscard]] bool ok() const noexcept { return !m_failed; }
    [[nodiscard]] std::size_t remaining() const noexcept { return m_data.size() - m_pos; }
    [[nodiscard]] std::size_t consumed() const noexcept { return m_pos; }

private:
    bool need( std::size_t n )
    {
        if( m_failed || m_data.size() - m_pos < n )
        {
            m_failed = true;
            return false;
        }
        return true;
    }

    ByteView    m_data;
    std::size_t m_pos    = 0;
    bool        m_failed = false;
};

} // namespace veil
