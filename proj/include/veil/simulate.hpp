/*
 * Copyright 2026 The veil authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <veil/capture.hpp>
#include <veil/handshake.hpp>
#include <veil/observer.hpp>
#include <veil/shaper.hpp>

namespace veil
{

/*
 * Desk-scale testbed: client and server state machines joined through an
 * observing, shaping middlebox over a virtual clock. Deterministic given
 * the configs' seeds; no wall time is involved anywhere.
 *
 * Frame timing: the sender serializes onto the link at `capacity_bps`
 * (store-and-forward into the middlebox), the middlebox releases whole
 * records per the token bucket, and delivery lands one propagation delay
 * after release.
 */

struct LinkConfig
{
    double       capacity_bps   = 10e6;
    std::int64_t propagation_us = 1000;
};

struct TransferReport
{
    bool        ok = false;
    std::string error;

    FlowClass                  classification = FlowClass::pending;
    std::optional<std::string> sni;

    std::vector<std::pair<double, double>> timeline; // window start (s) -> bits/s
    double                                 steady_bps = 0.0;

    std::int64_t  phase1_us = -1;
    std::int64_t  phase2_us = -1;
    std::int64_t  total_us  = 0;
    std::uint64_t payload_bytes        = 0;
    std::uint64_t delivered_wire_bytes = 0;
    std::uint64_t phase2_wire_bytes    = 0;
    int           handshakes_completed = 0;
    bool          fallback_used        = false;

    std::vector<CaptureEvent> capture;
};

namespace detail
{

struct TimedFrame
{
    std::int64_t deliver_us = 0;
    RecordFrame  frame;
};

/// Median of the full 1-second windows with the warmup (2 windows) and the
/// trailing partial window trimmed; falls back to the overall mean for
/// very short transfers.
inline double steady_state_bps( const std::vector<std::pair<double, double>>& timeline )
{
    if( timeline.size() > 4 )
    {
        std::vector<double> mid;
        for( std::size_t i = 2; i + 1 < timeline.size(); ++i )
            mid.push_back( timeline[i].second );
        std::sort( mid.begin(), mid.end() );
        return mid[mid.size() / 2];
    }
    if( timeline.empty() )
        return 0.0;
    double sum = 0.0;
    for( const auto& [t, bps] : timeline )
        sum += bps;
    return sum / static_cast<double>( timeline.size() );
}

} // namespace detail

inline TransferReport simulate_transfer( const ClientConfig& client_cfg,
        const ServerConfig& server_cfg, const ShaperConfig& shaper_cfg,
        const LinkConfig& link_cfg, std::uint64_t payload_bytes )
{
    TransferReport report;
    report.payload_bytes = payload_bytes;

    if( auto v = shaper_cfg.validate(); !v.ok() )
    {
        report.error = v.error().to_string();
        return report;
    }
    auto client = ClientConnection::create( client_cfg );
    if( !client.ok() )
    {
        report.error = client.error().to_string();
        return report;
    }
    auto server = ServerConnection::create( server_cfg );
    if( !server.ok() )
    {
        report.error = server.error().to_string();
        return report;
    }
    ClientConnection& c = client.value();
    ServerConnection& s = server.value();

    FlowState flow;
    flow.id = FlowId{ "client", "server", 0 };

    const double us_per_byte = 8e6 / link_cfg.capacity_bps;

    std::int64_t line_free[2]  = { 0, 0 };
    std::int64_t client_time   = 0;
    std::int64_t server_time   = 0;
    std::int64_t last_delivery = 0;

    std::deque<detail::TimedFrame> to_server;
    std::deque<detail::TimedFrame> to_client;

    std::map<std::int64_t, std::uint64_t> window_bytes; // second index -> wire bytes to client

    HandshakePhase last_client_phase = HandshakePhase::plain;
    bool           in_phase2         = false;
    std::uint64_t  app_delivered     = 0;
    bool           bulk_started      = false;

    // Sender -> middlebox -> receiver for one frame.
    auto push = [&]( Direction dir, const RecordFrame& frame, std::int64_t emit_us ) -> Status
    {
        auto bytes = encode_record( frame );
        if( !bytes.ok() )
            return bytes.error();
        const int          d     = dir_index( dir );
        const std::int64_t start = std::max( emit_us, line_free[d] );
        const std::int64_t arrive =
                start + static_cast<std::int64_t>( bytes.value().size() * us_per_byte );
        line_free[d] = arrive;

        CaptureEvent event;
        event.time_us = arrive;
        event.flow    = flow.id;
        event.dir     = dir;
        event.raw     = bytes.value();
        event.summary = summarize_frame( frame );
        report.capture.push_back( std::move( event ) );

        observe_bytes( flow, dir, bytes.value(), arrive );
        const std::int64_t release = shape( shaper_cfg, flow, dir, bytes.value().size(), arrive );
        const std::int64_t deliver = release + link_cfg.propagation_us;

        if( in_phase2 )
            report.phase2_wire_bytes += bytes.value().size();
        if( dir == Direction::client_to_server )
            to_server.push_back( { deliver, frame } );
        else
        {
            to_client.push_back( { deliver, frame } );
            if( bulk_started ) // the timeline tracks the payload transfer
                window_bytes[deliver / 1'000'000] += bytes.value().size();
            report.delivered_wire_bytes += bytes.value().size();
        }
        last_delivery = std::max( last_delivery, deliver );
        return ok_status();
    };

    auto fail_run = [&]( const Error& err )
    {
        report.error = err.to_string();
    };

    auto note_client_progress = [&]( std::int64_t at_us )
    {
        if( c.phase() != last_client_phase )
        {
            if( c.phase() == HandshakePhase::first_complete )
            {
                report.phase1_us = at_us;
                in_phase2        = c.handshake_in_progress();
            }
            else if( c.phase() == HandshakePhase::second_complete )
            {
                report.phase2_us = report.phase1_us >= 0 ? at_us - report.phase1_us : at_us;
                in_phase2        = false;
            }
            last_client_phase = c.phase();
        }
    };

    auto server_done = [&]() -> bool
    {
        if( s.failed() )
            return false;
        if( client_cfg.mode == ClientMode::legacy || c.fallback_used() )
            return s.phase() == HandshakePhase::first_complete;
        return s.phase() == HandshakePhase::second_complete;
    };

    auto start_bulk = [&]() -> Status
    {
        bulk_started = true;
        std::uint64_t remaining = payload_bytes;
        Bytes         chunk( 8192, 0xA5 );
        while( remaining > 0 )
        {
            const std::size_t n = std::min<std::uint64_t>( remaining, chunk.size() );
            auto frames = s.send_application( ByteView( chunk ).first( n ) );
            if( !frames.ok() )
                return frames.error();
            for( const auto& f : frames.value() )
                if( auto st = push( Direction::server_to_client, f, server_time ); !st.ok() )
                    return st.error();
            remaining -= n;
        }
        return ok_status();
    };

    auto first = c.step( std::nullopt );
    if( !first.ok() )
    {
        fail_run( first.error() );
        return report;
    }
    for( const auto& f : first.value() )
        if( auto st = push( Direction::client_to_server, f, 0 ); !st.ok() )
        {
            fail_run( st.error() );
            return report;
        }

    for( int guard = 0; guard < 4'000'000; ++guard )
    {
        const bool sv = !to_server.empty();
        const bool cv = !to_client.empty();
        if( !sv && !cv )
        {
            if( !bulk_started && server_done() && !c.failed() )
            {
                if( payload_bytes == 0 )
                    break;
                if( auto st = start_bulk(); !st.ok() )
                {
                    fail_run( st.error() );
                    return report;
                }
                continue;
            }
            break;
        }
        const bool serve_server = sv && ( !cv || to_server.front().deliver_us
                                                   <= to_client.front().deliver_us );
        if( serve_server )
        {
            auto item = std::move( to_server.front() );
            to_server.pop_front();
            server_time  = std::max( server_time, item.deliver_us );
            auto replies = s.step( item.frame );
            if( !replies.ok() )
            {
                if( auto alert = s.take_alert_to_send() )
                    (void)push( Direction::server_to_client, *alert, server_time );
                fail_run( replies.error() );
                break;
            }
            for( const auto& f : replies.value() )
                if( auto st = push( Direction::server_to_client, f, server_time ); !st.ok() )
                {
                    fail_run( st.error() );
                    return report;
                }
        }
        else
        {
            auto item = std::move( to_client.front() );
            to_client.pop_front();
            client_time  = std::max( client_time, item.deliver_us );
            auto replies = c.step( item.frame );
            if( !replies.ok() )
            {
                if( auto alert = c.take_alert_to_send() )
                    (void)push( Direction::client_to_server, *alert, client_time );
                fail_run( replies.error() );
                break;
            }
            note_client_progress( client_time );
            for( const auto& f : replies.value() )
                if( auto st = push( Direction::client_to_server, f, client_time ); !st.ok() )
                {
                    fail_run( st.error() );
                    return report;
                }
            for( const auto& data : c.take_received_application() )
                app_delivered += data.size();
        }
    }

    report.classification       = flow.classification;
    if( flow.sni )
        report.sni = flow.sni->host();
    report.handshakes_completed = c.handshakes_completed();
    report.fallback_used        = c.fallback_used();
    report.total_us             = last_delivery;

    for( const auto& [window, bytes] : window_bytes )
        report.timeline.emplace_back( static_cast<double>( window ),
                static_cast<double>( bytes ) * 8.0 );
    report.steady_bps = detail::steady_state_bps( report.timeline );

    if( report.error.empty() )
    {
        const bool payload_ok = payload_bytes == 0 || app_delivered >= payload_bytes;
        if( !payload_ok )
            report.error = "payload not fully delivered";
        else if( c.failed() )
            report.error = c.last_error().to_string();
        else if( s.failed() )
            report.error = s.last_error().to_string();
        else
            report.ok = true;
    }
    return report;
}

struct BenchReport
{
    std::uint64_t payload_bytes = 0;
    std::int64_t  legacy_us     = 0;
    std::int64_t  masked_us     = 0;
    double        extra_handshake_fraction = 0.0;
    std::uint64_t phase2_wire_bytes        = 0;
    int           repeats                  = 1;
    bool          ok = false;
    std::string   error;
};

/// Legacy vs masked timing on the in-memory link, median over `repeats`
/// seeded runs. The shaper is configured wide open so the link capacity is
/// the only bottleneck.
inline BenchReport run_bench( const ClientConfig& client_base, const ServerConfig& server_base,
        const LinkConfig& link, std::uint64_t payload_bytes, int repeats,
        std::uint64_t seed = 1 )
{
    BenchReport out;
    out.payload_bytes = payload_bytes;
    out.repeats       = std::max( 1, repeats );

    ShaperConfig wide_open;
    wide_open.default_rate_bps = link.capacity_bps * 1000.0;

    std::vector<std::int64_t> legacy_times;
    std::vector<std::int64_t> masked_times;
    for( int i = 0; i < out.repeats; ++i )
    {
        ClientConfig cc = client_base;
        ServerConfig sc = server_base;
        cc.rng_seed     = seed + 2 * static_cast<std::uint64_t>( i );
        sc.rng_seed     = seed + 2 * static_cast<std::uint64_t>( i ) + 1;

        cc.mode     = ClientMode::legacy;
        auto legacy = simulate_transfer( cc, sc, wide_open, link, payload_bytes );
        cc.mode     = ClientMode::masked;
        auto masked = simulate_transfer( cc, sc, wide_open, link, payload_bytes );
        if( !legacy.ok || !masked.ok )
        {
            out.error = !legacy.ok ? legacy.error : masked.error;
            return out;
        }
        legacy_times.push_back( legacy.total_us );
        masked_times.push_back( masked.total_us );
        out.phase2_wire_bytes = masked.phase2_wire_bytes;
    }
    std::sort( legacy_times.begin(), legacy_times.end() );
    std::sort( masked_times.begin(), masked_times.end() );
    out.legacy_us = legacy_times[legacy_times.size() / 2];
    out.masked_us = masked_times[masked_times.size() / 2];
    if( out.masked_us > 0 )
        out.extra_handshake_fraction =
                static_cast<double>( out.masked_us - out.legacy_us )
                / static_cast<double>( out.masked_us );
    out.ok = out.masked_us >= out.legacy_us;
    return out;
}

/// Two-certificate store matching the validation setup: a default front
/// certificate plus named entries.
inline Result<CertStore> make_demo_store( const std::string& front_subject,
        const std::vector<std::string>& named_subjects, std::uint64_t seed,
        std::optional<std::int64_t> now = {}, int validity_days = 30 )
{
    auto front = generate_self_signed( front_subject, validity_days, seed, now );
    if( !front.ok() )
        return front.error();
    CertStore store;
    store.default_entry = CertEntry{ front.value().first, front.value().second };
    std::uint64_t k = 1;
    for( const auto& subject : named_subjects )
    {
        auto entry = generate_self_signed( subject, validity_days, seed + k++, now );
        if( !entry.ok() )
            return entry.error();
        store.named.emplace( subject, CertEntry{ entry.value().first, entry.value().second } );
    }
    return store;
}

} // namespace veil
