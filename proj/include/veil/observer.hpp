/*
 * Copyright 2026 The veil authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <veil/bytes.hpp>
#include <veil/capture.hpp>
#include <veil/result.hpp>
#include <veil/wire.hpp>

namespace veil
{

/*
 * Passive flow classifier. Reassembles records from raw bytes in both
 * directions and keys the flow off the first plaintext ClientHello: a
 * readable server name identifies it, otherwise the flow goes Unknown as
 * soon as the plaintext handshake portion ends (first ChangeCipherSpec or
 * sealed record) or the traffic stops parsing. The observer never mutates
 * or drops traffic.
 */

enum class FlowClass
{
    pending,
    identified,
    unknown,
};

constexpr const char* flow_class_name( FlowClass c ) noexcept
{
    switch( c )
    {
        case FlowClass::pending:    return "PENDING";
        case FlowClass::identified: return "IDENTIFIED";
        case FlowClass::unknown:    return "UNKNOWN";
    }
    return "?";
}

inline constexpr std::size_t kObserverBudgetBytes = 16 * 1024; // per direction

struct FlowState
{
    FlowId id;

    // reassembly
    RecordStream record_stream[2];
    Bytes        handshake_buf[2];
    std::size_t  observed_bytes[2] = { 0, 0 };
    bool         parse_dead[2]     = { false, false };

    // classification
    FlowClass                 classification = FlowClass::pending;
    std::optional<SniValue>   sni;
    bool                      saw_hello_without_sni = false;
    std::uint64_t             records_seen            = 0;
    std::uint64_t             plaintext_client_hellos = 0;
    std::uint64_t             sni_extensions_seen     = 0;
    std::vector<std::uint8_t> plaintext_handshake_types;

    // accounting
    std::uint64_t bytes_forwarded[2] = { 0, 0 };
    std::int64_t  first_byte_us      = -1;
    std::int64_t  last_byte_us       = -1;

    // token bucket (held here so shaping is per flow and per direction)
    bool          bucket_init[2]     = { false, false };
    double        bucket_tokens[2]   = { 0.0, 0.0 };
    std::int64_t  bucket_refill_us[2] = { 0, 0 };
    std::int64_t  next_release_us[2] = { 0, 0 };
};

constexpr int dir_index( Direction d ) noexcept
{
    return d == Direction::client_to_server ? 0 : 1;
}

namespace detail
{

/// Pending -> Identified / Unknown happens exactly once; later evidence
/// never reclassifies.
inline void classify( FlowState& flow, FlowClass cls, std::optional<SniValue> sni = {} )
{
    if( flow.classification != FlowClass::pending )
        return;
    flow.classification = cls;
    flow.sni            = std::move( sni );
}

inline void observe_handshake_bytes( FlowState& flow, int d, const Bytes& payload )
{
    if( flow.parse_dead[d] )
        return;
    Bytes& buf = flow.handshake_buf[d];
    buf.insert( buf.end(), payload.begin(), payload.end() );
    std::size_t pos = 0;
    while( pos < buf.size() )
    {
        auto decoded = decode_handshake_prefix( ByteView( buf ).subspan( pos ) );
        if( !decoded.ok() )
        {
            if( decoded.code() == Err::need_more_data )
                break;
            flow.parse_dead[d] = true;
            classify( flow, FlowClass::unknown );
            break;
        }
        pos += decoded.value().consumed;
        const auto& msg = decoded.value().message;
        flow.plaintext_handshake_types.push_back(
                static_cast<std::uint8_t>( handshake_type_of( msg ) ) );
        if( const auto* ch = std::get_if<ClientHello>( &msg ) )
        {
            ++flow.plaintext_client_hellos;
            auto sni = client_hello_sni( *ch );
            if( !sni.ok() )
            {
                classify( flow, FlowClass::unknown );
            }
            else if( sni.value() )
            {
                ++flow.sni_extensions_seen;
                classify( flow, FlowClass::identified, sni.value() );
            }
            else
            {
                flow.saw_hello_without_sni = true;
            }
        }
    }
    buf.erase( buf.begin(), buf.begin() + pos );
}

} // namespace detail

/// Feeds raw wire bytes of one direction into the flow state. Tolerates
/// arbitrary input: garbage parks the flow at Unknown, nothing throws.
inline void observe_bytes( FlowState& flow, Direction dir, ByteView bytes, std::int64_t now_us )
{
    const int d = dir_index( dir );
    if( flow.first_byte_us < 0 )
        flow.first_byte_us = now_us;
    flow.last_byte_us = now_us;
    flow.observed_bytes[d] += bytes.size();

    if( !flow.parse_dead[d] )
    {
        flow.record_stream[d].append( bytes );
        for( ;; )
        {
            auto next = flow.record_stream[d].next();
            if( !next.ok() )
            {
                flow.parse_dead[d] = true;
                detail::classify( flow, FlowClass::unknown );
                break;
            }
            if( !next.value() )
                break;
            const RecordFrame& frame = *next.value();
            ++flow.records_seen;
            switch( frame.content_type )
            {
                case ContentType::handshake:
                    detail::observe_handshake_bytes( flow, d, frame.payload );
                    break;
                case ContentType::change_cipher_spec:
                case ContentType::application_data:
                    // End of the plaintext handshake portion.
                    detail::classify( flow, FlowClass::unknown );
                    break;
                case ContentType::alert:
                    break;
            }
        }
    }

    if( flow.classification == FlowClass::pending
            && flow.observed_bytes[d] > kObserverBudgetBytes )
        detail::classify( flow, FlowClass::unknown );
}

/// Replays a capture (as produced by capture_write) through the observer;
/// equivalent to having watched the run live.
inline FlowState observe_capture( const std::vector<CaptureEvent>& events, const FlowId& id )
{
    FlowState flow;
    flow.id = id;
    for( const auto& event : events )
        if( event.flow == id )
            observe_bytes( flow, event.dir, event.raw, event.time_us );
    return flow;
}

} // namespace veil
