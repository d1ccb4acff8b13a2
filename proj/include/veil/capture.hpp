/*
 * Copyright 2026 The veil authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include <cstdint>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include <veil/bytes.hpp>
#include <veil/crypto.hpp>
#include <veil/result.hpp>
#include <veil/wire.hpp>

namespace veil
{

/*
 * Capture log: the artifact's packet trace. One event per line:
 *
 *   time_us <TAB> client|server|n <TAB> C2S|S2C <TAB> hex(raw) <TAB> summary-json
 *
 * Raw hex is authoritative — concatenating it per direction reproduces the
 * exact wire stream. The summary (record_type, handshake_type, sni) is
 * advisory and only reflects what is readable in plaintext.
 */

struct FlowId
{
    std::string   client_id = "client";
    std::string   server_id = "server";
    std::uint64_t number    = 0;

    bool operator==( const FlowId& ) const = default;
    auto operator<=>( const FlowId& ) const = default;

    [[nodiscard]] std::string to_string() const
    {
        return client_id + "|" + server_id + "|" + std::to_string( number );
    }

    static std::optional<FlowId> parse( const std::string& text )
    {
        const auto a = text.find( '|' );
        const auto b = text.rfind( '|' );
        if( a == std::string::npos || b == a )
            return std::nullopt;
        FlowId id;
        id.client_id = text.substr( 0, a );
        id.server_id = text.substr( a + 1, b - a - 1 );
        try
        {
            id.number = std::stoull( text.substr( b + 1 ) );
        }
        catch( ... )
        {
            return std::nullopt;
        }
        return id;
    }
};

constexpr const char* direction_name( Direction d ) noexcept
{
    return d == Direction::client_to_server ? "C2S" : "S2C";
}

struct CaptureSummary
{
    std::uint8_t                record_type = 0;
    std::optional<std::uint8_t> handshake_type;
    std::optional<std::string>  sni;

    bool operator==( const CaptureSummary& ) const = default;
};

struct CaptureEvent
{
    std::int64_t   time_us = 0;
    FlowId         flow;
    Direction      dir = Direction::client_to_server;
    Bytes          raw;
    CaptureSummary summary;

    bool operator==( const CaptureEvent& ) const = default;
};

/// Plaintext-level view of one wire frame, i.e. what a passive observer
/// reads without keys. Sealed frames summarize as bare application_data.
inline CaptureSummary summarize_frame( const RecordFrame& frame )
{
    CaptureSummary s;
    s.record_type = static_cast<std::uint8_t>( frame.content_type );
    if( frame.content_type != ContentType::handshake )
        return s;
    auto decoded = decode_handshake_prefix( frame.payload );
    if( !decoded.ok() )
        return s;
    s.handshake_type = static_cast<std::uint8_t>( handshake_type_of( decoded.value().message ) );
    if( const auto* ch = std::get_if<ClientHello>( &decoded.value().message ) )
        if( auto sni = client_hello_sni( *ch ); sni.ok() && sni.value() )
            s.sni = sni.value()->host();
    return s;
}

inline CaptureSummary summarize_bytes( ByteView raw )
{
    auto r = decode_record( raw );
    if( !r.ok() )
        return CaptureSummary{};
    return summarize_frame( r.value().frame );
}

inline std::string capture_event_line( const CaptureEvent& event )
{
    nlohmann::json j;
    j["record_type"] = event.summary.record_type;
    if( event.summary.handshake_type )
        j["handshake_type"] = *event.summary.handshake_type;
    else
        j["handshake_type"] = nullptr;
    if( event.summary.sni )
        j["sni"] = *event.summary.sni;
    else
        j["sni"] = nullptr;

    std::ostringstream os;
    os << event.time_us << '\t' << event.flow.to_string() << '\t' << direction_name( event.dir )
       << '\t' << to_hex( event.raw ) << '\t' << j.dump();
    return os.str();
}

inline Result<CaptureEvent> parse_capture_line( const std::string& line )
{
    std::vector<std::string> cols;
    std::size_t              pos = 0;
    while( cols.size() < 4 )
    {
        const auto tab = line.find( '\t', pos );
        if( tab == std::string::npos )
            return Error{ Err::parse_error, "capture line has too few columns" };
        cols.push_back( line.substr( pos, tab - pos ) );
        pos = tab + 1;
    }
    cols.push_back( line.substr( pos ) );

    CaptureEvent event;
    try
    {
        event.time_us = std::stoll( cols[0] );
    }
    catch( ... )
    {
        return Error{ Err::parse_error, "bad timestamp" };
    }
    auto flow = FlowId::parse( cols[1] );
    if( !flow )
        return Error{ Err::parse_error, "bad flow id" };
    event.flow = *flow;
    if( cols[2] == "C2S" )
        event.dir = Direction::client_to_server;
    else if( cols[2] == "S2C" )
        event.dir = Direction::server_to_client;
    else
        return Error{ Err::parse_error, "bad direction " + cols[2] };
    auto raw = from_hex( cols[3] );
    if( !raw )
        return Error{ Err::parse_error, "bad hex payload" };
    event.raw = std::move( *raw );

    auto j = nlohmann::json::parse( cols[4], nullptr, false );
    if( j.is_discarded() || !j.contains( "record_type" ) )
        return Error{ Err::parse_error, "bad summary json" };
    event.summary.record_type = j["record_type"].get<std::uint8_t>();
    if( j.contains( "handshake_type" ) && !j["handshake_type"].is_null() )
        event.summary.handshake_type = j["handshake_type"].get<std::uint8_t>();
    if( j.contains( "sni" ) && !j["sni"].is_null() )
        event.summary.sni = j["sni"].get<std::string>();
    return event;
}

inline Result<std::vector<CaptureEvent>> capture_from_text( std::string_view text )
{
    std::vector<CaptureEvent> out;
    std::istringstream        is{ std::string( text ) };
    std::string               line;
    while( std::getline( is, line ) )
    {
        if( line.empty() )
            continue;
        auto event = parse_capture_line( line );
        if( !event.ok() )
            return event.error();
        out.push_back( std::move( event.value() ) );
    }
    return out;
}

inline std::string capture_to_text( const std::vector<CaptureEvent>& events )
{
    std::string out;
    for( const auto& event : events )
    {
        out += capture_event_line( event );
        out += '\n';
    }
    return out;
}

inline Status capture_write( const std::vector<CaptureEvent>& events, const std::string& path )
{
    std::ofstream out( path, std::ios::binary | std::ios::trunc );
    if( !out )
        return Error{ Err::io_error, "cannot write " + path };
    out << capture_to_text( events );
    out.flush();
    if( !out )
        return Error{ Err::io_error, "write failed for " + path };
    return ok_status();
}

inline Result<std::vector<CaptureEvent>> capture_read( const std::string& path )
{
    std::ifstream in( path, std::ios::binary );
    if( !in )
        return Error{ Err::io_error, "cannot open " + path };
    std::ostringstream ss;
    ss << in.rdbuf();
    return capture_from_text( ss.str() );
}

/// Serialized incremental writer for live endpoints; one line per event,
/// flushed eagerly so interrupted runs keep their prefix.
class CaptureSink
{
public:
    CaptureSink() = default;

    Status open( const std::string& path )
    {
        m_out.open( path, std::ios::binary | std::ios::trunc );
        if( !m_out )
            return Error{ Err::io_error, "cannot write " + path };
        return ok_status();
    }

    [[nodiscard]] bool is_open() const noexcept { return m_out.is_open(); }

    void record( const CaptureEvent& event )
    {
        if( !m_out.is_open() )
            return;
        std::lock_guard<std::mutex> lock( m_mutex );
        m_out << capture_event_line( event ) << '\n';
        m_out.flush();
    }

private:
    std::ofstream m_out;
    std::mutex    m_mutex;
};

} // namespace veil
