/*
 * Copyright 2026 The veil authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <arpa/inet.h>

#include <veil/bytes.hpp>
#include <veil/result.hpp>

namespace veil
{

/*
 * Record layer, RFC 5246 framing:
 *
 *   struct {
 *       ContentType type;          // 1 byte
 *       ProtocolVersion version;   // 2 bytes (major, minor)
 *       uint16 length;             // big-endian payload length
 *       opaque fragment[length];
 *   } TLSPlaintext;
 */

enum class ContentType : std::uint8_t
{
    change_cipher_spec = 20,
    alert              = 21,
    handshake          = 22,
    application_data   = 23,
};

constexpr bool content_type_known( std::uint8_t b ) noexcept
{
    return b >= 20 && b <= 23;
}

struct ProtocolVersion
{
    std::uint8_t major = 3;
    std::uint8_t minor = 3;

    bool operator==( const ProtocolVersion& ) const = default;
};

inline constexpr ProtocolVersion kVersionTls12{ 3, 3 };
inline constexpr std::size_t     kMaxRecordPayload = 1u << 14;
inline constexpr std::size_t     kRecordHeaderSize = 5;

struct RecordFrame
{
    ContentType     content_type = ContentType::handshake;
    ProtocolVersion version      = kVersionTls12;
    Bytes           payload;

    bool operator==( const RecordFrame& ) const = default;
};

inline Result<Bytes> encode_record( const RecordFrame& frame )
{
    if( frame.payload.size() > kMaxRecordPayload )
        return Error{ Err::payload_too_large,
                "record payload " + std::to_string( frame.payload.size() ) + " bytes" };
    ByteWriter w;
    w.u8( static_cast<std::uint8_t>( frame.content_type ) );
    w.u8( frame.version.major );
    w.u8( frame.version.minor );
    w.u16( static_cast<std::uint16_t>( frame.payload.size() ) );
    w.bytes( frame.payload );
    return w.take();
}

struct DecodedRecord
{
    RecordFrame frame;
    std::size_t consumed = 0;
};

/// Incremental-friendly: decodes one record from the front of `stream`.
/// NeedMoreData is only returned while the input is a plausible prefix.
inline Result<DecodedRecord> decode_record( ByteView stream )
{
    if( stream.empty() )
        return Error{ Err::need_more_data, "empty input" };
    if( !content_type_known( stream[0] ) )
        return Error{ Err::decode_error,
                "content type " + std::to_string( stream[0] ) };
    if( stream.size() < kRecordHeaderSize )
        return Error{ Err::need_more_data, "record header incomplete" };
    const std::size_t length = ( std::size_t( stream[3] ) << 8 ) | stream[4];
    if( length > kMaxRecordPayload )
        return Error{ Err::decode_error,
                "declared length " + std::to_string( length ) };
    if( stream.size() < kRecordHeaderSize + length )
        return Error{ Err::need_more_data, "record body incomplete" };
    DecodedRecord out;
    out.frame.content_type = static_cast<ContentType>( stream[0] );
    out.frame.version      = ProtocolVersion{ stream[1], stream[2] };
    out.frame.payload.assign( stream.begin() + kRecordHeaderSize,
            stream.begin() + kRecordHeaderSize + length );
    out.consumed = kRecordHeaderSize + length;
    return out;
}

/// Buffering record reassembler for byte streams (sockets, captures).
/// A decode error is sticky; callers decide what to do with the flow.
class RecordStream
{
public:
    void append( ByteView data )
    {
        m_buf.insert( m_buf.end(), data.begin(), data.end() );
    }

    /// nullopt = need more bytes.
    Result<std::optional<RecordFrame>> next()
    {
        if( m_dead )
            return Error{ Err::decode_error, "stream already failed" };
        auto r = decode_record( ByteView( m_buf ).subspan( m_pos ) );
        if( !r.ok() )
        {
            if( r.code() == Err::need_more_data )
            {
                compact();
                return std::optional<RecordFrame>{};
            }
            m_dead = true;
            return r.error();
        }
        m_pos += r.value().consumed;
        return std::optional<RecordFrame>( std::move( r.value().frame ) );
    }

    [[nodiscard]] std::size_t buffered() const noexcept { return m_buf.size() - m_pos; }

private:
    void compact()
    {
        if( m_pos > 0 )
        {
            m_buf.erase( m_buf.begin(), m_buf.begin() + m_pos );
            m_pos = 0;
        }
    }

    Bytes       m_buf;
    std::size_t m_pos  = 0;
    bool        m_dead = false;
};

/*
 * Extensions, RFC 6066 server_name layout:
 *
 *   extension_type(2) extension_data_length(2) extension_data
 *   server_name extension_data = list_length(2) name_type(1)=0
 *                                host_length(2) host
 */

struct Extension
{
    std::uint16_t type = 0;
    Bytes         data;

    bool operator==( const Extension& ) const = default;
};

inline constexpr std::uint16_t kExtensionServerName = 0x0000;

/// Host name as carried by the server_name extension. Construction
/// validates: nonempty, at most 255 bytes, printable ASCII, no trailing
/// dot, and never an IPv4/IPv6 address literal.
class SniValue
{
public:
    static Result<SniValue> parse( std::string_view host )
    {
        if( host.empty() )
            return Error{ Err::invalid_host_name, "empty host name" };
        if( host.size() > 255 )
            return Error{ Err::invalid_host_name, "host name exceeds 255 bytes" };
        if( host.back() == '.' )
            return Error{ Err::invalid_host_name, "trailing dot" };
        for( char c : host )
        {
            if( c <= 0x20 || c >= 0x7F )
                return Error{ Err::invalid_host_name, "non-printable or non-ASCII byte" };
        }
        if( is_address_literal( host ) )
            return Error{ Err::invalid_host_name,
                    "address literal not allowed: " + std::string( host ) };
        return SniValue( std::string( host ) );
    }

    [[nodiscard]] const std::string& host() const noexcept { return m_host; }

    bool operator==( const SniValue& ) const = default;
    auto operator<=>( const SniValue& ) const = default;

private:
    explicit SniValue( std::string host )
        : m_host( std::move( host ) )
    {}

    static bool is_address_literal( std::string_view host )
    {
        char          buf[sizeof( struct in6_addr )];
        std::string   z( host );
        if( inet_pton( AF_INET, z.c_str(), buf ) == 1 )
            return true;
        if( inet_pton( AF_INET6, z.c_str(), buf ) == 1 )
            return true;
        return false;
    }

    std::string m_host;
};

inline Extension encode_sni_extension( const SniValue& name )
{
    const std::string& host = name.host();
    ByteWriter w;
    w.u16( static_cast<std::uint16_t>( host.size() + 3 ) ); // server_name_list length
    w.u8( 0 );                                              // name_type host_name
    w.u16( static_cast<std::uint16_t>( host.size() ) );
    w.bytes( to_bytes( host ) );
    return Extension{ kExtensionServerName, w.take() };
}

inline Result<Extension> encode_sni_extension( std::string_view host )
{
    auto v = SniValue::parse( host );
    if( !v.ok() )
        return v.error();
    return encode_sni_extension( v.value() );
}

inline Result<SniValue> decode_sni_extension( const Extension& ext )
{
    if( ext.type != kExtensionServerName )
        return Error{ Err::decode_error, "not a server_name extension" };
    ByteReader r( ext.data );
    const std::uint16_t list_len = r.u16();
    if( !r.ok() || list_len != r.remaining() )
        return Error{ Err::decode_error, "server_name_list length mismatch" };
    const std::uint8_t name_type = r.u8();
    if( !r.ok() )
        return Error{ Err::decode_error, "truncated server_name entry" };
    if( name_type != 0 )
        return Error{ Err::decode_error,
                "unsupported name type " + std::to_string( name_type ) };
    const std::uint16_t host_len = r.u16();
    if( !r.ok() || host_len != r.remaining() )
        return Error{ Err::decode_error, "host_name length mismatch" };
    Bytes host = r.bytes( host_len );
    if( !r.ok() || r.remaining() != 0 )
        return Error{ Err::decode_error, "trailing bytes in server_name extension" };
    auto v = SniValue::parse( to_string( host ) );
    if( !v.ok() )
        return Error{ Err::decode_error, v.error().detail };
    return v.value();
}

/*
 * Handshake messages. Header is 1 type byte + uint24 body length; the
 * six bodies below are the full message set this protocol exchanges.
 */

enum class HandshakeType : std::uint8_t
{
    client_hello        = 1,
    server_hello        = 2,
    certificate         = 11,
    server_hello_done   = 14,
    client_key_exchange = 16,
    finished            = 20,
};

using CipherSuiteId = std::uint16_t;

inline constexpr CipherSuiteId kSuiteReal = 0x0001;
inline constexpr CipherSuiteId kSuiteNull = 0x00FF;

using Random32 = std::array<std::uint8_t, 32>;

struct ClientHello
{
    ProtocolVersion            client_version = kVersionTls12;
    Random32                   random{};
    Bytes                      session_id;
    std::vector<CipherSuiteId> cipher_suites;
    std::vector<Extension>     extensions;

    bool operator==( const ClientHello& ) const = default;
};

struct ServerHello
{
    ProtocolVersion        server_version = kVersionTls12;
    Random32               random{};
    Bytes                  session_id;
    CipherSuiteId          chosen_suite = 0;
    std::vector<Extension> extensions;

    bool operator==( const ServerHello& ) const = default;
};

struct CertificatePayload
{
    Bytes cert_bytes;

    bool operator==( const CertificatePayload& ) const = default;
};

struct ServerHelloDone
{
    bool operator==( const ServerHelloDone& ) const = default;
};

struct ClientKeyExchange
{
    Bytes key_share;

    bool operator==( const ClientKeyExchange& ) const = default;
};

struct Finished
{
    std::array<std::uint8_t, 12> verify_data{};

    bool operator==( const Finished& ) const = default;
};

using HandshakeMessage = std::variant<ClientHello, ServerHello, CertificatePayload,
        ServerHelloDone, ClientKeyExchange, Finished>;

inline HandshakeType handshake_type_of( const HandshakeMessage& msg )
{
    struct V
    {
        HandshakeType operator()( const ClientHello& ) const { return HandshakeType::client_hello; }
        HandshakeType operator()( const ServerHello& ) const { return HandshakeType::server_hello; }
        HandshakeType operator()( const CertificatePayload& ) const { return HandshakeType::certificate; }
        HandshakeType operator()( const ServerHelloDone& ) const { return HandshakeType::server_hello_done; }
        HandshakeType operator()( const ClientKeyExchange& ) const { return HandshakeType::client_key_exchange; }
        HandshakeType operator()( const Finished& ) const { return HandshakeType::finished; }
    };
    return std::visit( V{}, msg );
}

namespace detail
{

inline Status write_extensions( ByteWriter& w, const std::vector<Extension>& extensions )
{
    // Empty list: the whole block is omitted.
    if( extensions.empty() )
        return ok_status();
    ByteWriter inner;
    for( const Extension& ext : extensions )
    {
        if( ext.data.size() > 0xFFFF )
            return Error{ Err::payload_too_large, "extension data too large" };
        inner.u16( ext.type );
        inner.u16( static_cast<std::uint16_t>( ext.data.size() ) );
        inner.bytes( ext.data );
    }
    if( inner.size() > 0xFFFF )
        return Error{ Err::payload_too_large, "extensions block too large" };
    w.u16( static_cast<std::uint16_t>( inner.size() ) );
    w.bytes( inner.data() );
    return ok_status();
}

inline Result<std::vector<Extension>> read_extensions( ByteReader& r )
{
    std::vector<Extension> out;
    if( r.remaining() == 0 )
        return out; // omitted block
    const std::uint16_t total = r.u16();
    if( !r.ok() || total != r.remaining() )
        return Error{ Err::decode_error, "extensions block length mismatch" };
    while( r.remaining() > 0 )
    {
        Extension ext;
        ext.type                = r.u16();
        const std::uint16_t len = r.u16();
        if( !r.ok() || len > r.remaining() )
            return Error{ Err::decode_error, "extension length exceeds block" };
        ext.data = r.bytes( len );
        out.push_back( std::move( ext ) );
    }
    return out;
}

inline Status write_hello_common( ByteWriter& w, ProtocolVersion version,
        const Random32& random, const Bytes& session_id )
{
    if( session_id.size() > 32 )
        return Error{ Err::payload_too_large, "session id exceeds 32 bytes" };
    w.u8( version.major );
    w.u8( version.minor );
    w.bytes( random );
    w.u8( static_cast<std::uint8_t>( session_id.size() ) );
    w.bytes( session_id );
    return ok_status();
}

} // namespace detail

inline Result<Bytes> encode_handshake_body( const HandshakeMessage& msg )
{
    ByteWriter w;
    if( const auto* ch = std::get_if<ClientHello>( &msg ) )
    {
        if( auto s = detail::write_hello_common( w, ch->client_version, ch->random, ch->session_id ); !s.ok() )
            return s.error();
        if( ch->cipher_suites.size() * 2 > 0xFFFF )
            return Error{ Err::payload_too_large, "cipher suite list too large" };
        w.u16( static_cast<std::uint16_t>( ch->cipher_suites.size() * 2 ) );
        for( CipherSuiteId id : ch->cipher_suites )
            w.u16( id );
        if( auto s = detail::write_extensions( w, ch->extensions ); !s.ok() )
            return s.error();
    }
    else if( const auto* sh = std::get_if<ServerHello>( &msg ) )
    {
        if( auto s = detail::write_hello_common( w, sh->server_version, sh->random, sh->session_id ); !s.ok() )
            return s.error();
        w.u16( sh->chosen_suite );
        if( auto s = detail::write_extensions( w, sh->extensions ); !s.ok() )
            return s.error();
    }
    else if( const auto* cert = std::get_if<CertificatePayload>( &msg ) )
    {
        w.bytes( cert->cert_bytes );
    }
    else if( std::holds_alternative<ServerHelloDone>( msg ) )
    {
        // empty body
    }
    else if( const auto* cke = std::get_if<ClientKeyExchange>( &msg ) )
    {
        w.bytes( cke->key_share );
    }
    else if( const auto* fin = std::get_if<Finished>( &msg ) )
    {
        w.bytes( fin->verify_data );
    }
    return w.take();
}

inline Result<Bytes> encode_handshake( const HandshakeMessage& msg )
{
    auto body = encode_handshake_body( msg );
    if( !body.ok() )
        return body.error();
    if( body.value().size() > 0xFFFFFF )
        return Error{ Err::payload_too_large, "handshake body exceeds uint24" };
    ByteWriter w;
    w.u8( static_cast<std::uint8_t>( handshake_type_of( msg ) ) );
    w.u24( static_cast<std::uint32_t>( body.value().size() ) );
    w.bytes( body.value() );
    return w.take();
}

struct DecodedHandshake
{
    HandshakeMessage message;
    std::size_t      consumed = 0;
};

namespace detail
{

inline Result<HandshakeMessage> decode_handshake_body( HandshakeType type, ByteView body )
{
    ByteReader r( body );
    switch( type )
    {
        case HandshakeType::client_hello:
        {
            ClientHello ch;
            ch.client_version = ProtocolVersion{ r.u8(), r.u8() };
            {
                ByteView rnd = r.view( 32 );
                if( !r.ok() )
                    return Error{ Err::decode_error, "truncated ClientHello random" };
                std::copy( rnd.begin(), rnd.end(), ch.random.begin() );
            }
            const std::uint8_t sid_len = r.u8();
            if( sid_len > 32 )
                return Error{ Err::decode_error, "session id exceeds 32 bytes" };
            ch.session_id = r.bytes( sid_len );
            const std::uint16_t cs_len = r.u16();
            if( !r.ok() || cs_len % 2 != 0 || cs_len > r.remaining() )
                return Error{ Err::decode_error, "cipher suite list length" };
            for( std::uint16_t i = 0; i < cs_len; i += 2 )
                ch.cipher_suites.push_back( r.u16() );
            auto exts = read_extensions( r );
            if( !exts.ok() )
                return exts.error();
            ch.extensions = std::move( exts.value() );
            if( !r.ok() || r.remaining() != 0 )
                return Error{ Err::decode_error, "malformed ClientHello body" };
            return HandshakeMessage( std::move( ch ) );
        }
        case HandshakeType::server_hello:
        {
            ServerHello sh;
            sh.server_version = ProtocolVersion{ r.u8(), r.u8() };
            {
                ByteView rnd = r.view( 32 );
                if( !r.ok() )
                    return Error{ Err::decode_error, "truncated ServerHello random" };
                std::copy( rnd.begin(), rnd.end(), sh.random.begin() );
            }
            const std::uint8_t sid_len = r.u8();
            if( sid_len > 32 )
                return Error{ Err::decode_error, "session id exceeds 32 bytes" };
            sh.session_id   = r.bytes( sid_len );
            sh.chosen_suite = r.u16();
            auto exts       = read_extensions( r );
            if( !exts.ok() )
                return exts.error();
            sh.extensions = std::move( exts.value() );
            if( !r.ok() || r.remaining() != 0 )
                return Error{ Err::decode_error, "malformed ServerHello body" };
            return HandshakeMessage( std::move( sh ) );
        }
        case HandshakeType::certificate:
            return HandshakeMessage( CertificatePayload{ Bytes( body.begin(), body.end() ) } );
        case HandshakeType::server_hello_done:
            if( !body.empty() )
                return Error{ Err::decode_error, "ServerHelloDone body not empty" };
            return HandshakeMessage( ServerHelloDone{} );
        case HandshakeType::client_key_exchange:
            return HandshakeMessage( ClientKeyExchange{ Bytes( body.begin(), body.end() ) } );
        case HandshakeType::finished:
        {
            if( body.size() != 12 )
                return Error{ Err::decode_error, "Finished body must be 12 bytes" };
            Finished fin;
            std::copy( body.begin(), body.end(), fin.verify_data.begin() );
            return HandshakeMessage( fin );
        }
    }
    return Error{ Err::decode_error, "unknown handshake type" };
}

constexpr bool handshake_type_known( std::uint8_t b ) noexcept
{
    switch( static_cast<HandshakeType>( b ) )
    {
        case HandshakeType::client_hello:
        case HandshakeType::server_hello:
        case HandshakeType::certificate:
        case HandshakeType::server_hello_done:
        case HandshakeType::client_key_exchange:
        case HandshakeType::finished:
            return true;
    }
    return false;
}

} // namespace detail

/// Decodes one handshake message from the front of `data` (message streams
/// may carry several back to back). NeedMoreData while a prefix is plausible.
inline Result<DecodedHandshake> decode_handshake_prefix( ByteView data )
{
    if( data.empty() )
        return Error{ Err::need_more_data, "empty input" };
    if( !detail::handshake_type_known( data[0] ) )
        return Error{ Err::decode_error,
                "handshake type " + std::to_string( data[0] ) };
    if( data.size() < 4 )
        return Error{ Err::need_more_data, "handshake header incomplete" };
    const std::size_t body_len = ( std::size_t( data[1] ) << 16 )
            | ( std::size_t( data[2] ) << 8 ) | data[3];
    if( data.size() < 4 + body_len )
        return Error{ Err::need_more_data, "handshake body incomplete" };
    auto msg = detail::decode_handshake_body(
            static_cast<HandshakeType>( data[0] ), data.subspan( 4, body_len ) );
    if( !msg.ok() )
        return msg.error();
    return DecodedHandshake{ std::move( msg.value() ), 4 + body_len };
}

/// Strict form: `data` must hold exactly one message.
inline Result<HandshakeMessage> decode_handshake( ByteView data )
{
    auto r = decode_handshake_prefix( data );
    if( !r.ok() )
    {
        if( r.code() == Err::need_more_data )
            return Error{ Err::decode_error, r.error().detail };
        return r.error();
    }
    if( r.value().consumed != data.size() )
        return Error{ Err::decode_error, "trailing bytes after handshake message" };
    return std::move( r.value().message );
}

inline const Extension* find_extension( const std::vector<Extension>& exts, std::uint16_t type )
{
    for( const Extension& e : exts )
        if( e.type == type )
            return &e;
    return nullptr;
}

/// SNI carried by a ClientHello, if any. Malformed extension data reports
/// as a decode error rather than "absent".
inline Result<std::optional<SniValue>> client_hello_sni( const ClientHello& ch )
{
    const Extension* ext = find_extension( ch.extensions, kExtensionServerName );
    if( ext == nullptr )
        return std::optional<SniValue>{};
    auto sni = decode_sni_extension( *ext );
    if( !sni.ok() )
        return sni.error();
    return std::optional<SniValue>( std::move( sni.value() ) );
}

} // namespace veil
