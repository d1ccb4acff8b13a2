/*
 * Copyright 2026 The veil authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include <veil/observer.hpp>
#include <veil/result.hpp>
#include <veil/wire.hpp>

namespace veil
{

/*
 * Classification-keyed token bucket. Flows identified with a configured
 * name drain at that name's rate; everything else (pending, unknown,
 * unconfigured names) drains at the default rate. The shaper holds or
 * releases whole records and never reorders a direction.
 */

struct ShaperConfig
{
    std::map<std::string, double> class_rates_bps;
    double                        default_rate_bps  = 10e6;
    std::size_t                   bucket_depth_bytes = 32 * 1024;

    [[nodiscard]] Status validate() const
    {
        if( default_rate_bps <= 0 )
            return Error{ Err::parse_error, "default rate must be positive" };
        for( const auto& [name, rate] : class_rates_bps )
            if( rate <= 0 )
                return Error{ Err::parse_error, "rate for " + name + " must be positive" };
        if( bucket_depth_bytes < kRecordHeaderSize + kMaxRecordPayload )
            return Error{ Err::parse_error, "bucket depth below one full record" };
        return ok_status();
    }
};

inline double shaper_rate_for( const ShaperConfig& cfg, const FlowState& flow )
{
    if( flow.classification == FlowClass::identified && flow.sni )
    {
        auto it = cfg.class_rates_bps.find( flow.sni->host() );
        if( it != cfg.class_rates_bps.end() )
            return it->second;
    }
    return cfg.default_rate_bps;
}

/// Release time for a packet of `packet_len` bytes arriving `now_us`;
/// monotone per direction so ordering is preserved.
inline std::int64_t shape( const ShaperConfig& cfg, FlowState& flow, Direction dir,
        std::size_t packet_len, std::int64_t now_us )
{
    const int    d            = dir_index( dir );
    const double rate_bps     = shaper_rate_for( cfg, flow );
    const double bytes_per_us = rate_bps / 8e6;

    if( !flow.bucket_init[d] )
    {
        flow.bucket_init[d]      = true;
        flow.bucket_tokens[d]    = static_cast<double>( cfg.bucket_depth_bytes );
        flow.bucket_refill_us[d] = now_us;
        flow.next_release_us[d]  = now_us;
    }

    double tokens = std::min( static_cast<double>( cfg.bucket_depth_bytes ),
            flow.bucket_tokens[d]
                    + static_cast<double>( now_us - flow.bucket_refill_us[d] ) * bytes_per_us );

    std::int64_t release;
    if( tokens >= static_cast<double>( packet_len ) )
    {
        tokens -= static_cast<double>( packet_len );
        release = now_us;
    }
    else
    {
        const double deficit = static_cast<double>( packet_len ) - tokens;
        release = now_us + static_cast<std::int64_t>( std::ceil( deficit / bytes_per_us ) );
        tokens  = 0.0;
    }
    release = std::max( release, flow.next_release_us[d] );

    flow.bucket_tokens[d]    = tokens;
    flow.bucket_refill_us[d] = release;
    flow.next_release_us[d]  = release;
    flow.bytes_forwarded[d] += packet_len;
    return release;
}

} // namespace veil
