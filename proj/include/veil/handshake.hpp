/*
 * Copyright 2026 The veil authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <veil/certs.hpp>
#include <veil/crypto.hpp>
#include <veil/result.hpp>
#include <veil/rng.hpp>
#include <veil/wire.hpp>

namespace veil
{

/*
 * Two-phase secure-channel establishment.
 *
 * Phase 1: an ordinary certificate-exchange handshake whose ClientHello
 * deliberately omits the server_name extension; the server answers with
 * its default certificate. Phase 2: a complete second handshake carrying
 * the real server name, run entirely inside the channel phase 1 set up,
 * which rekeys the connection to the named server's credentials. Records
 * protected under either epoch travel with outer type application_data,
 * so an on-path observer sees exactly one ClientHello and no server name.
 */

enum class HandshakePhase
{
    plain,           // no channel yet
    first_complete,  // channel under default-certificate keys
    second_complete, // channel under target-certificate keys
};

constexpr const char* phase_name( HandshakePhase p ) noexcept
{
    switch( p )
    {
        case HandshakePhase::plain:           return "Plain";
        case HandshakePhase::first_complete:  return "FirstComplete";
        case HandshakePhase::second_complete: return "SecondComplete";
    }
    return "?";
}

enum class ClientMode
{
    masked,
    legacy,
};

enum class AlertLevel : std::uint8_t
{
    warning = 1,
    fatal   = 2,
};

struct AlertMessage
{
    AlertLevel   level = AlertLevel::fatal;
    std::uint8_t code  = 0;

    bool operator==( const AlertMessage& ) const = default;
};

inline constexpr std::uint8_t kAlertCloseNotify       = 0;
inline constexpr std::uint8_t kAlertUnexpectedMessage = 10;
inline constexpr std::uint8_t kAlertBadRecordMac      = 20;
inline constexpr std::uint8_t kAlertHandshakeFailure  = 40;
inline constexpr std::uint8_t kAlertBadCertificate    = 42;
inline constexpr std::uint8_t kAlertDecodeError       = 50;
inline constexpr std::uint8_t kAlertDecryptError      = 51;
inline constexpr std::uint8_t kAlertUnrecognizedName  = 112; // always fatal
/// Warning-level return cause: "retry with a single conventional
/// handshake". Shares the byte value of unrecognized_name; the level
/// disambiguates.
inline constexpr std::uint8_t kAlertMaskedUnsupported = 0x70;

inline RecordFrame make_alert_record( AlertMessage alert )
{
    return RecordFrame{ ContentType::alert, kVersionTls12,
            Bytes{ static_cast<std::uint8_t>( alert.level ), alert.code } };
}

inline Result<AlertMessage> parse_alert( const RecordFrame& frame )
{
    if( frame.content_type != ContentType::alert || frame.payload.size() != 2 )
        return Error{ Err::decode_error, "malformed alert record" };
    if( frame.payload[0] != 1 && frame.payload[0] != 2 )
        return Error{ Err::decode_error, "unknown alert level" };
    return AlertMessage{ static_cast<AlertLevel>( frame.payload[0] ), frame.payload[1] };
}

struct ClientConfig
{
    std::optional<SniValue>      target_sni;
    ClientMode                   mode = ClientMode::masked;
    std::vector<CipherSuiteId>   suites{ kSuiteReal };
    std::optional<std::string>   expect_front_name; // optional phase-1 subject pin
    std::optional<std::uint64_t> rng_seed;
    std::optional<std::int64_t>  now; // validation clock override
};

struct ServerConfig
{
    std::shared_ptr<const CertStore> store;
    bool                             legacy_only = false;
    std::optional<std::uint64_t>     rng_seed;
    std::optional<std::int64_t>      now;
};

/// Whether the next ClientHello carries a server name. Masked mode:
/// absent for the first handshake, the target for the in-tunnel second
/// one. Legacy mode always follows the configured value.
inline std::optional<SniValue> client_sni_policy( HandshakePhase phase, const ClientConfig& cfg )
{
    if( cfg.mode == ClientMode::masked && phase == HandshakePhase::plain )
        return std::nullopt;
    return cfg.target_sni;
}

/// Certificate choice for an incoming hello. A missing name selects the
/// default certificate on a plain connection but is an error inside the
/// tunnel, where the whole point is to present the real name.
inline Result<CertEntry> server_select_certificate( const CertStore& store,
        const std::optional<SniValue>& offered, bool under_tunnel )
{
    if( !offered )
    {
        if( under_tunnel )
            return Error{ Err::handshake_failure, "second handshake carried no server name" };
        return store.default_entry;
    }
    auto entry = store_lookup( store, offered );
    if( !entry.ok() )
        return Error{ Err::handshake_failure, "unrecognized_name: " + offered->host() };
    return entry;
}

enum class ResumptionDecision
{
    accept,
    reject,
};

/// Handshake requests after phase 1 are new negotiations, not resumptions:
/// a hello sealed under the established channel is accepted even though its
/// name differs from the one the channel was keyed to. Anything plaintext,
/// or any handshake after phase 2, is rejected.
inline ResumptionDecision resumption_guard( HandshakePhase phase,
        const std::optional<SniValue>& /*offered*/, bool arrived_sealed )
{
    if( phase == HandshakePhase::first_complete && arrived_sealed )
        return ResumptionDecision::accept;
    return ResumptionDecision::reject;
}

/// Return cause for servers running in legacy-only mode (proceed = nullopt).
inline std::optional<AlertMessage> legacy_fallback( const ServerConfig& cfg,
        const ClientHello& first_hello )
{
    if( cfg.legacy_only && find_extension( first_hello.extensions, kExtensionServerName ) == nullptr )
        return AlertMessage{ AlertLevel::warning, kAlertMaskedUnsupported };
    return std::nullopt;
}

namespace detail
{

/// Per-direction record protection. `next` holds keys derived by the
/// in-flight handshake; each direction flips to them at its
/// ChangeCipherSpec and the completed handshake promotes them to `active`,
/// discarding the previous epoch.
struct ProtectionState
{
    std::optional<ChannelKeys> active;
    std::optional<ChannelKeys> next;
    bool                       write_next = false;
    bool                       read_next  = false;

    ChannelKeys* write_keys()
    {
        if( write_next && next )
            return &*next;
        return active ? &*active : nullptr;
    }
    ChannelKeys* read_keys()
    {
        if( read_next && next )
            return &*next;
        return active ? &*active : nullptr;
    }
};

enum class Expect
{
    start,
    server_hello,
    certificate,
    server_hello_done,
    change_cipher_spec,
    finished,
    client_hello,
    client_key_exchange,
    steady,
    closed,
};

} // namespace detail

/// State shared by both connection roles: phase, transcript, protection
/// epochs, delivered application data and the failure latch.
class ConnectionBase
{
public:
    [[nodiscard]] HandshakePhase phase() const noexcept { return m_phase; }
    [[nodiscard]] const std::optional<SniValue>& established_sni() const noexcept
    {
        return m_established_sni;
    }
    [[nodiscard]] const std::optional<ChannelKeys>& active_keys() const noexcept
    {
        return m_prot.active;
    }
    [[nodiscard]] const std::optional<CertificateDoc>& peer_certificate() const noexcept
    {
        return m_peer_cert;
    }
    [[nodiscard]] int handshakes_completed() const noexcept { return m_handshakes_completed; }
    [[nodiscard]] bool handshake_in_progress() const noexcept
    {
        return m_expect != detail::Expect::steady && m_expect != detail::Expect::closed
                && !m_failed;
    }
    [[nodiscard]] bool failed() const noexcept { return m_failed; }
    [[nodiscard]] const Error& last_error() const noexcept { return m_error; }
    [[nodiscard]] bool closed() const noexcept { return m_closed; }
    [[nodiscard]] const std::optional<AlertMessage>& last_alert_received() const noexcept
    {
        return m_alert_received;
    }

    /// Fatal alert produced by a failed step, already protected for the
    /// wire; drivers forward it to the peer.
    std::optional<RecordFrame> take_alert_to_send()
    {
        auto out = std::move( m_alert_to_send );
        m_alert_to_send.reset();
        return out;
    }

    std::vector<Bytes> take_received_application()
    {
        std::vector<Bytes> out = std::move( m_app_received );
        m_app_received.clear();
        return out;
    }

    /// Chunks and protects application payload for the wire.
    Result<std::vector<RecordFrame>> send_application( ByteView payload )
    {
        if( m_failed )
            return m_error;
        if( m_phase == HandshakePhase::plain || m_prot.write_keys() == nullptr )
            return Error{ Err::invalid_phase, "no channel established" };
        std::vector<RecordFrame> out;
        std::size_t              off = 0;
        do
        {
            const std::size_t n = std::min( payload.size() - off, kAppChunkBytes );
            RecordFrame       plain{ ContentType::application_data, kVersionTls12,
                    Bytes( payload.begin() + off, payload.begin() + off + n ) };
            auto sealed = seal_record( *m_prot.write_keys(), m_write_dir, plain );
            if( !sealed.ok() )
                return sealed.error();
            out.push_back( std::move( sealed.value() ) );
            off += n;
        } while( off < payload.size() );
        return out;
    }

    Result<RecordFrame> make_close_frame()
    {
        RecordFrame plain = make_alert_record( { AlertLevel::warning, kAlertCloseNotify } );
        if( ChannelKeys* wk = m_prot.write_keys() )
            return seal_record( *wk, m_write_dir, plain );
        return plain;
    }

    /// Atomic credential switch at the second handshake's ChangeCipherSpec
    /// boundary: new keys become the only live epoch, the connection is
    /// bound to the new certificate identity, old keys are discarded.
    Status rekey_apply( ChannelKeys new_keys, CertificateDoc new_cert, SniValue new_sni )
    {
        if( m_phase != HandshakePhase::first_complete )
            return Error{ Err::invalid_phase,
                    std::string( "rekey in phase " ) + phase_name( m_phase ) };
        m_prot.active     = std::move( new_keys );
        m_prot.next.reset();
        m_prot.write_next = false;
        m_prot.read_next  = false;
        m_peer_cert       = std::move( new_cert );
        m_established_sni = std::move( new_sni );
        m_phase           = HandshakePhase::second_complete;
        ++m_handshakes_completed;
        return ok_status();
    }

protected:
    static constexpr std::size_t kAppChunkBytes = 8192;

    explicit ConnectionBase( Direction write_dir )
        : m_write_dir( write_dir )
        , m_read_dir( write_dir == Direction::client_to_server ? Direction::server_to_client
                                                               : Direction::client_to_server )
    {}

    Error fail( Err code, std::string detail, std::uint8_t alert_code )
    {
        m_failed = true;
        m_error  = Error{ code, std::move( detail ) };
        m_expect = detail::Expect::closed;
        RecordFrame alert = make_alert_record( { AlertLevel::fatal, alert_code } );
        if( ChannelKeys* wk = m_prot.write_keys() )
        {
            if( auto sealed = seal_record( *wk, m_write_dir, alert ); sealed.ok() )
                m_alert_to_send = std::move( sealed.value() );
        }
        else
        {
            m_alert_to_send = std::move( alert );
        }
        return m_error;
    }

    Result<RecordFrame> protect_outgoing( RecordFrame plain )
    {
        if( ChannelKeys* wk = m_prot.write_keys() )
            return seal_record( *wk, m_write_dir, plain );
        return plain;
    }

    Result<RecordFrame> protect_handshake( const HandshakeMessage& msg, Transcript* transcript )
    {
        auto bytes = encode_handshake( msg );
        if( !bytes.ok() )
            return bytes.error();
        if( transcript != nullptr )
            transcript->append( bytes.value() );
        return protect_outgoing(
                RecordFrame{ ContentType::handshake, kVersionTls12, std::move( bytes.value() ) } );
    }

    /// Removes record protection from an incoming frame. `was_sealed`
    /// reports whether the frame travelled inside the channel, which the
    /// resumption guard needs.
    Result<RecordFrame> unprotect_incoming( const RecordFrame& wire, bool& was_sealed )
    {
        was_sealed = false;
        if( wire.version != kVersionTls12 )
            return Error{ Err::protocol_violation, "unexpected record version" };
        ChannelKeys* rk = m_prot.read_keys();
        if( rk == nullptr )
        {
            if( wire.content_type == ContentType::application_data )
                return Error{ Err::protocol_violation, "sealed record before any channel" };
            return wire;
        }
        if( wire.content_type != ContentType::application_data )
            // Plaintext injected into a protected connection.
            return Error{ Err::protocol_violation,
                    "plaintext record on protected connection" };
        auto inner = open_record( *rk, m_read_dir, wire );
        if( !inner.ok() )
            return inner.error();
        was_sealed = true;
        return inner;
    }

    Direction m_write_dir;
    Direction m_read_dir;

    HandshakePhase             m_phase = HandshakePhase::plain;
    detail::ProtectionState    m_prot;
    Transcript                 m_transcript;
    std::optional<SniValue>    m_established_sni;
    std::optional<CertificateDoc> m_peer_cert;
    detail::Expect             m_expect = detail::Expect::start;
    int                        m_handshakes_completed = 0;
    bool                       m_failed = false;
    bool                       m_closed = false;
    Error                      m_error{ Err::protocol_violation, {} };
    std::optional<RecordFrame> m_alert_to_send;
    std::optional<AlertMessage> m_alert_received;
    std::vector<Bytes>         m_app_received;
    DetRng                     m_rng;
};

/// Client half of the state machine. step(nullopt) opens the connection
/// and emits the first flight; every later call feeds one incoming record.
class ClientConnection : public ConnectionBase
{
public:
    static Result<ClientConnection> create( ClientConfig cfg )
    {
        if( cfg.mode == ClientMode::masked && !cfg.target_sni )
            return Error{ Err::invalid_host_name, "masked mode requires a target name" };
        if( cfg.suites.empty() )
            return Error{ Err::unknown_suite, "no cipher suites configured" };
        for( CipherSuiteId id : cfg.suites )
            if( !suite_known( id ) )
                return Error{ Err::unknown_suite, "suite " + std::to_string( id ) };
        return ClientConnection( std::move( cfg ) );
    }

    [[nodiscard]] bool fallback_used() const noexcept { return m_fallback_used; }

    Result<std::vector<RecordFrame>> step( std::optional<RecordFrame> incoming )
    {
        if( m_failed )
            return m_error;
        if( !incoming )
        {
            if( m_expect != detail::Expect::start )
                return fail( Err::protocol_violation, "connection already started",
                        kAlertUnexpectedMessage );
            return begin_handshake( 1 );
        }
        bool was_sealed = false;
        auto inner      = unprotect_incoming( *incoming, was_sealed );
        if( !inner.ok() )
        {
            const Err  code  = inner.code();
            const auto alert = code == Err::auth_failure ? kAlertBadRecordMac : kAlertUnexpectedMessage;
            return fail( code, inner.error().detail, alert );
        }
        return handle_plain( inner.value() );
    }

private:
    explicit ClientConnection( ClientConfig cfg )
        : ConnectionBase( Direction::client_to_server )
        , m_cfg( std::move( cfg ) )
    {
        m_rng = DetRng( m_cfg.rng_seed );
    }

    [[nodiscard]] std::int64_t now() const
    {
        return m_cfg.now ? *m_cfg.now : static_cast<std::int64_t>( std::time( nullptr ) );
    }

    ClientMode effective_mode() const noexcept
    {
        return m_fallback_used ? ClientMode::legacy : m_cfg.mode;
    }

    Result<std::vector<RecordFrame>> begin_handshake( int index )
    {
        m_hs_index = index;
        m_transcript.reset();

        ClientConfig policy_cfg = m_cfg;
        policy_cfg.mode         = effective_mode();
        const std::optional<SniValue> sni = client_sni_policy( m_phase, policy_cfg );

        ClientHello ch;
        ch.client_version = kVersionTls12;
        m_rng.fill( ch.random );
        ch.session_id = m_rng.bytes( 16 );
        ch.cipher_suites = m_cfg.suites;
        if( sni )
            ch.extensions.push_back( encode_sni_extension( *sni ) );
        m_sent_sni       = sni;
        m_client_random  = ch.random;
        m_expect         = detail::Expect::server_hello;

        auto frame = protect_handshake( HandshakeMessage( ch ), &m_transcript );
        if( !frame.ok() )
            return fail( frame.code(), frame.error().detail, kAlertUnexpectedMessage );
        return std::vector<RecordFrame>{ std::move( frame.value() ) };
    }

    Result<std::vector<RecordFrame>> handle_plain( const RecordFrame& frame )
    {
        switch( frame.content_type )
        {
            case ContentType::alert:
                return handle_alert( frame );
            case ContentType::change_cipher_spec:
                if( m_expect != detail::Expect::change_cipher_spec || frame.payload != Bytes{ 0x01 } )
                    return fail( Err::protocol_violation, "unexpected ChangeCipherSpec",
                            kAlertUnexpectedMessage );
                m_prot.read_next = true;
                m_expect         = detail::Expect::finished;
                return std::vector<RecordFrame>{};
            case ContentType::handshake:
            {
                auto msg = decode_handshake( frame.payload );
                if( !msg.ok() )
                    return fail( Err::protocol_violation, msg.error().detail, kAlertDecodeError );
                return handle_handshake( msg.value(), frame.payload );
            }
            case ContentType::application_data:
                if( m_expect != detail::Expect::steady )
                    return fail( Err::protocol_violation, "application data during handshake",
                            kAlertUnexpectedMessage );
                m_app_received.push_back( frame.payload );
                return std::vector<RecordFrame>{};
        }
        return fail( Err::protocol_violation, "unknown content type", kAlertDecodeError );
    }

    Result<std::vector<RecordFrame>> handle_alert( const RecordFrame& frame )
    {
        auto alert = parse_alert( frame );
        if( !alert.ok() )
            return fail( Err::protocol_violation, alert.error().detail, kAlertDecodeError );
        m_alert_received = alert.value();
        if( alert.value().level == AlertLevel::warning )
        {
            if( alert.value().code == kAlertMaskedUnsupported && m_cfg.mode == ClientMode::masked
                    && m_hs_index == 1 && m_expect == detail::Expect::server_hello
                    && m_phase == HandshakePhase::plain )
            {
                // Server cannot host the two-phase exchange: retry on the
                // same connection with one conventional handshake.
                m_fallback_used = true;
                return begin_handshake( 1 );
            }
            if( alert.value().code == kAlertCloseNotify )
            {
                m_closed = true;
                m_expect = detail::Expect::closed;
            }
            return std::vector<RecordFrame>{};
        }
        m_failed = true;
        m_error  = Error{ Err::peer_alert,
                "fatal alert " + std::to_string( alert.value().code ) };
        m_expect = detail::Expect::closed;
        return m_error;
    }

    Result<std::vector<RecordFrame>> handle_handshake( const HandshakeMessage& msg,
            const Bytes& raw )
    {
        if( std::holds_alternative<ServerHello>( msg ) && m_expect == detail::Expect::server_hello )
        {
            const auto& sh = std::get<ServerHello>( msg );
            if( sh.server_version != kVersionTls12 )
                return fail( Err::protocol_violation, "unexpected hello version",
                        kAlertHandshakeFailure );
            bool offered = false;
            for( CipherSuiteId id : m_cfg.suites )
                offered = offered || id == sh.chosen_suite;
            if( !offered || !suite_known( sh.chosen_suite ) )
                return fail( Err::handshake_failure, "server chose an unoffered suite",
                        kAlertHandshakeFailure );
            m_suite         = sh.chosen_suite;
            m_server_random = sh.random;
            m_transcript.append( raw );
            m_expect = detail::Expect::certificate;
            return std::vector<RecordFrame>{};
        }
        if( std::holds_alternative<CertificatePayload>( msg )
                && m_expect == detail::Expect::certificate )
        {
            const auto& cp   = std::get<CertificatePayload>( msg );
            auto        cert = certificate_from_text( to_string( cp.cert_bytes ) );
            if( !cert.ok() )
                return fail( Err::certificate_rejected, cert.error().detail, kAlertBadCertificate );
            const std::optional<std::string> expected = expected_subject();
            const CertStatus status = validate_certificate( cert.value(), expected, now() );
            if( status != CertStatus::valid )
                return fail( Err::certificate_rejected, cert_status_name( status ),
                        kAlertBadCertificate );
            m_handshake_cert = std::move( cert.value() );
            m_transcript.append( raw );
            m_expect = detail::Expect::server_hello_done;
            return std::vector<RecordFrame>{};
        }
        if( std::holds_alternative<ServerHelloDone>( msg )
                && m_expect == detail::Expect::server_hello_done )
        {
            m_transcript.append( raw );
            return send_second_flight();
        }
        if( std::holds_alternative<Finished>( msg ) && m_expect == detail::Expect::finished )
        {
            const auto& fin = std::get<Finished>( msg );
            const auto expected = finished_verify_data( m_suite, m_shared_secret,
                    m_transcript.hash(), /*from_client=*/false );
            if( fin.verify_data != expected )
                return fail( Err::finished_mismatch, "server Finished does not verify",
                        kAlertDecryptError );
            m_transcript.append( raw );
            return complete_handshake();
        }
        return fail( Err::protocol_violation, "unexpected handshake message",
                kAlertUnexpectedMessage );
    }

    std::optional<std::string> expected_subject() const
    {
        if( m_hs_index == 2 )
            return m_cfg.target_sni->host();
        if( effective_mode() == ClientMode::legacy && m_sent_sni )
            return m_sent_sni->host();
        return m_cfg.expect_front_name; // masked phase 1: optional pin
    }

    Result<std::vector<RecordFrame>> send_second_flight()
    {
        auto eph = keypair_generate( m_suite, m_rng );
        if( !eph.ok() )
            return fail( eph.code(), eph.error().detail, kAlertHandshakeFailure );
        auto secret = shared_secret( eph.value(), m_handshake_cert->public_part );
        if( !secret.ok() )
            return fail( secret.code(), secret.error().detail, kAlertHandshakeFailure );
        m_shared_secret = std::move( secret.value() );

        std::vector<RecordFrame> out;
        auto cke = protect_handshake(
                HandshakeMessage( ClientKeyExchange{ eph.value().public_part } ), &m_transcript );
        if( !cke.ok() )
            return fail( cke.code(), cke.error().detail, kAlertUnexpectedMessage );
        out.push_back( std::move( cke.value() ) );

        const auto th1  = m_transcript.hash();
        auto       keys = derive_channel_keys( m_suite, m_shared_secret, th1,
                      m_client_random, m_server_random );
        if( !keys.ok() )
            return fail( keys.code(), keys.error().detail, kAlertHandshakeFailure );
        m_prot.next = std::move( keys.value() );

        auto ccs = protect_outgoing( RecordFrame{ ContentType::change_cipher_spec,
                kVersionTls12, Bytes{ 0x01 } } );
        if( !ccs.ok() )
            return fail( ccs.code(), ccs.error().detail, kAlertUnexpectedMessage );
        out.push_back( std::move( ccs.value() ) );
        m_prot.write_next = true;

        Finished fin;
        fin.verify_data = finished_verify_data( m_suite, m_shared_secret, th1, /*from_client=*/true );
        auto fin_frame  = protect_handshake( HandshakeMessage( fin ), &m_transcript );
        if( !fin_frame.ok() )
            return fail( fin_frame.code(), fin_frame.error().detail, kAlertUnexpectedMessage );
        out.push_back( std::move( fin_frame.value() ) );

        m_expect = detail::Expect::change_cipher_spec;
        return out;
    }

    Result<std::vector<RecordFrame>> complete_handshake()
    {
        if( m_hs_index == 1 )
        {
            m_prot.active     = std::move( *m_prot.next );
            m_prot.next.reset();
            m_prot.write_next = false;
            m_prot.read_next  = false;
            m_phase           = HandshakePhase::first_complete;
            m_peer_cert       = m_handshake_cert;
            ++m_handshakes_completed;
            if( effective_mode() == ClientMode::masked )
                return begin_handshake( 2 );
            // Legacy single handshake: done, with the name it carried.
            m_established_sni = m_sent_sni;
            m_expect          = detail::Expect::steady;
            return std::vector<RecordFrame>{};
        }
        auto status = rekey_apply( std::move( *m_prot.next ), *m_handshake_cert,
                *m_cfg.target_sni );
        if( !status.ok() )
            return fail( status.code(), status.error().detail, kAlertUnexpectedMessage );
        m_expect = detail::Expect::steady;
        return std::vector<RecordFrame>{};
    }

    ClientConfig                  m_cfg;
    int                           m_hs_index = 0;
    bool                          m_fallback_used = false;
    CipherSuiteId                 m_suite = kSuiteReal;
    Random32                      m_client_random{};
    Random32                      m_server_random{};
    std::optional<SniValue>       m_sent_sni;
    std::optional<CertificateDoc> m_handshake_cert;
    Bytes                         m_shared_secret;
};

/// Server half: reacts to incoming records only.
class ServerConnection : public ConnectionBase
{
public:
    static Result<ServerConnection> create( ServerConfig cfg )
    {
        if( !cfg.store )
            return Error{ Err::missing_default_certificate, "no certificate store" };
        const std::int64_t now = cfg.now ? *cfg.now : static_cast<std::int64_t>( std::time( nullptr ) );
        const CertStatus   status =
                validate_certificate( cfg.store->default_entry.cert, std::nullopt, now );
        if( status != CertStatus::valid )
            return Error{ Err::missing_default_certificate,
                    std::string( "default certificate is " ) + cert_status_name( status ) };
        return ServerConnection( std::move( cfg ) );
    }

    Result<std::vector<RecordFrame>> step( const RecordFrame& incoming )
    {
        if( m_failed )
            return m_error;
        if( m_expect == detail::Expect::start )
            m_expect = detail::Expect::client_hello;
        bool was_sealed = false;
        auto inner      = unprotect_incoming( incoming, was_sealed );
        if( !inner.ok() )
        {
            // A plaintext hello on the protected connection is the
            // resumption-abuse case: reject it explicitly.
            if( inner.code() == Err::protocol_violation
                    && incoming.content_type == ContentType::handshake
                    && m_prot.read_keys() != nullptr )
            {
                std::optional<SniValue> offered;
                if( auto msg = decode_handshake( incoming.payload ); msg.ok() )
                    if( const auto* ch = std::get_if<ClientHello>( &msg.value() ) )
                        if( auto sni = client_hello_sni( *ch ); sni.ok() )
                            offered = sni.value();
                if( resumption_guard( m_phase, offered, /*arrived_sealed=*/false )
                        == ResumptionDecision::reject )
                    return fail( Err::protocol_violation,
                            "plaintext handshake on protected connection",
                            kAlertUnexpectedMessage );
            }
            const auto alert = inner.code() == Err::auth_failure ? kAlertBadRecordMac
                                                                 : kAlertUnexpectedMessage;
            return fail( inner.code(), inner.error().detail, alert );
        }
        return handle_plain( inner.value(), was_sealed );
    }

private:
    explicit ServerConnection( ServerConfig cfg )
        : ConnectionBase( Direction::server_to_client )
        , m_cfg( std::move( cfg ) )
    {
        m_rng = DetRng( m_cfg.rng_seed );
    }

    [[nodiscard]] std::int64_t now() const
    {
        return m_cfg.now ? *m_cfg.now : static_cast<std::int64_t>( std::time( nullptr ) );
    }

    Result<std::vector<RecordFrame>> handle_plain( const RecordFrame& frame, bool was_sealed )
    {
        switch( frame.content_type )
        {
            case ContentType::alert:
            {
                auto alert = parse_alert( frame );
                if( !alert.ok() )
                    return fail( Err::protocol_violation, alert.error().detail, kAlertDecodeError );
                m_alert_received = alert.value();
                if( alert.value().level == AlertLevel::fatal )
                {
                    m_failed = true;
                    m_error  = Error{ Err::peer_alert,
                            "fatal alert " + std::to_string( alert.value().code ) };
                    m_expect = detail::Expect::closed;
                    return m_error;
                }
                if( alert.value().code == kAlertCloseNotify )
                {
                    m_closed = true;
                    m_expect = detail::Expect::closed;
                }
                return std::vector<RecordFrame>{};
            }
            case ContentType::change_cipher_spec:
                if( m_expect != detail::Expect::change_cipher_spec || frame.payload != Bytes{ 0x01 } )
                    return fail( Err::protocol_violation, "unexpected ChangeCipherSpec",
                            kAlertUnexpectedMessage );
                m_prot.read_next = true;
                m_expect         = detail::Expect::finished;
                return std::vector<RecordFrame>{};
            case ContentType::handshake:
            {
                auto msg = decode_handshake( frame.payload );
                if( !msg.ok() )
                    return fail( Err::protocol_violation, msg.error().detail, kAlertDecodeError );
                return handle_handshake( msg.value(), frame.payload, was_sealed );
            }
            case ContentType::application_data:
                if( m_expect != detail::Expect::steady )
                    return fail( Err::protocol_violation, "application data during handshake",
                            kAlertUnexpectedMessage );
                m_app_received.push_back( frame.payload );
                return std::vector<RecordFrame>{};
        }
        return fail( Err::protocol_violation, "unknown content type", kAlertDecodeError );
    }

    Result<std::vector<RecordFrame>> handle_handshake( const HandshakeMessage& msg,
            const Bytes& raw, bool was_sealed )
    {
        const bool awaiting_hello = m_expect == detail::Expect::client_hello
                || m_expect == detail::Expect::steady;
        if( std::holds_alternative<ClientHello>( msg ) && awaiting_hello )
            return handle_client_hello( std::get<ClientHello>( msg ), raw, was_sealed );
        if( std::holds_alternative<ClientKeyExchange>( msg )
                && m_expect == detail::Expect::client_key_exchange )
            return handle_client_key_exchange( std::get<ClientKeyExchange>( msg ), raw );
        if( std::holds_alternative<Finished>( msg ) && m_expect == detail::Expect::finished )
            return handle_finished( std::get<Finished>( msg ), raw );
        return fail( Err::protocol_violation, "unexpected handshake message",
                kAlertUnexpectedMessage );
    }

    Result<std::vector<RecordFrame>> handle_client_hello( const ClientHello& ch, const Bytes& raw,
            bool was_sealed )
    {
        if( m_phase == HandshakePhase::second_complete )
        {
            // No third handshake on this connection.
            return fail( Err::protocol_violation, "handshake after rekey",
                    kAlertUnexpectedMessage );
        }
        if( m_phase == HandshakePhase::first_complete )
        {
            auto sni_probe = client_hello_sni( ch );
            const auto decision = resumption_guard( m_phase,
                    sni_probe.ok() ? sni_probe.value() : std::nullopt, was_sealed );
            if( decision == ResumptionDecision::reject )
                return fail( Err::protocol_violation, "rejected renegotiation",
                        kAlertUnexpectedMessage );
        }
        if( ch.client_version != kVersionTls12 )
            return fail( Err::protocol_violation, "unexpected hello version",
                    kAlertHandshakeFailure );

        if( m_phase == HandshakePhase::plain )
        {
            if( auto alert = legacy_fallback( m_cfg, ch ) )
            {
                // Stay ready for the retried hello on this connection.
                auto frame = protect_outgoing( make_alert_record( *alert ) );
                if( !frame.ok() )
                    return fail( frame.code(), frame.error().detail, kAlertUnexpectedMessage );
                m_expect = detail::Expect::client_hello;
                return std::vector<RecordFrame>{ std::move( frame.value() ) };
            }
        }

        auto sni = client_hello_sni( ch );
        if( !sni.ok() )
            return fail( Err::protocol_violation, sni.error().detail, kAlertDecodeError );
        m_offered_sni = sni.value();
        m_hs_index    = m_phase == HandshakePhase::first_complete ? 2 : 1;

        const bool under_tunnel = m_phase == HandshakePhase::first_complete;
        auto       entry = server_select_certificate( *m_cfg.store, m_offered_sni, under_tunnel );
        if( !entry.ok() )
            return fail( entry.code(), entry.error().detail, kAlertUnrecognizedName );
        m_selected = std::move( entry.value() );

        m_suite                = 0;
        bool suite_found       = false;
        for( CipherSuiteId id : ch.cipher_suites )
        {
            if( suite_known( id ) )
            {
                m_suite      = id;
                suite_found  = true;
                break;
            }
        }
        if( !suite_found )
            return fail( Err::handshake_failure, "no mutual cipher suite",
                    kAlertHandshakeFailure );

        m_client_random = ch.random;
        m_transcript.reset();
        m_transcript.append( raw );

        ServerHello sh;
        sh.server_version = kVersionTls12;
        m_rng.fill( sh.random );
        sh.session_id   = m_rng.bytes( 16 );
        sh.chosen_suite = m_suite;
        m_server_random = sh.random;

        std::vector<RecordFrame> out;
        for( HandshakeMessage reply : { HandshakeMessage( sh ),
                     HandshakeMessage( CertificatePayload{ certificate_to_wire( m_selected.cert ) } ),
                     HandshakeMessage( ServerHelloDone{} ) } )
        {
            auto frame = protect_handshake( reply, &m_transcript );
            if( !frame.ok() )
                return fail( frame.code(), frame.error().detail, kAlertUnexpectedMessage );
            out.push_back( std::move( frame.value() ) );
        }
        m_expect = detail::Expect::client_key_exchange;
        return out;
    }

    Result<std::vector<RecordFrame>> handle_client_key_exchange( const ClientKeyExchange& cke,
            const Bytes& raw )
    {
        KeyPair agreement_key = m_selected.key;
        agreement_key.suite   = m_suite; // agreement follows the negotiated suite
        auto secret           = shared_secret( agreement_key, cke.key_share );
        if( !secret.ok() )
            return fail( secret.code(), secret.error().detail, kAlertDecodeError );
        m_shared_secret = std::move( secret.value() );
        m_transcript.append( raw );

        const auto th1  = m_transcript.hash();
        auto       keys = derive_channel_keys( m_suite, m_shared_secret, th1,
                      m_client_random, m_server_random );
        if( !keys.ok() )
            return fail( keys.code(), keys.error().detail, kAlertHandshakeFailure );
        m_prot.next          = std::move( keys.value() );
        m_expected_client_fv = finished_verify_data( m_suite, m_shared_secret, th1,
                /*from_client=*/true );
        m_expect = detail::Expect::change_cipher_spec;
        return std::vector<RecordFrame>{};
    }

    Result<std::vector<RecordFrame>> handle_finished( const Finished& fin, const Bytes& raw )
    {
        if( fin.verify_data != m_expected_client_fv )
            return fail( Err::finished_mismatch, "client Finished does not verify",
                    kAlertDecryptError );
        m_transcript.append( raw );

        std::vector<RecordFrame> out;
        auto ccs = protect_outgoing( RecordFrame{ ContentType::change_cipher_spec,
                kVersionTls12, Bytes{ 0x01 } } );
        if( !ccs.ok() )
            return fail( ccs.code(), ccs.error().detail, kAlertUnexpectedMessage );
        out.push_back( std::move( ccs.value() ) );
        m_prot.write_next = true;

        Finished reply;
        reply.verify_data = finished_verify_data( m_suite, m_shared_secret, m_transcript.hash(),
                /*from_client=*/false );
        auto fin_frame = protect_handshake( HandshakeMessage( reply ), &m_transcript );
        if( !fin_frame.ok() )
            return fail( fin_frame.code(), fin_frame.error().detail, kAlertUnexpectedMessage );
        out.push_back( std::move( fin_frame.value() ) );

        if( m_hs_index == 1 )
        {
            m_prot.active     = std::move( *m_prot.next );
            m_prot.next.reset();
            m_prot.write_next = false;
            m_prot.read_next  = false;
            m_phase           = HandshakePhase::first_complete;
            if( m_offered_sni )
                m_established_sni = m_offered_sni; // legacy handshake carried a name
            ++m_handshakes_completed;
        }
        else
        {
            auto status = rekey_apply( std::move( *m_prot.next ), m_selected.cert,
                    *m_offered_sni );
            if( !status.ok() )
                return fail( status.code(), status.error().detail, kAlertUnexpectedMessage );
        }
        m_selected_subject = m_selected.cert.subject;
        m_expect           = detail::Expect::steady;
        return out;
    }

public:
    [[nodiscard]] const std::string& last_selected_subject() const noexcept
    {
        return m_selected_subject;
    }

private:
    ServerConfig                 m_cfg;
    int                          m_hs_index = 0;
    CipherSuiteId                m_suite    = kSuiteReal;
    Random32                     m_client_random{};
    Random32                     m_server_random{};
    std::optional<SniValue>      m_offered_sni;
    CertEntry                    m_selected;
    Bytes                        m_shared_secret;
    std::array<std::uint8_t, 12> m_expected_client_fv{};
    std::string                  m_selected_subject;
};

/*
 * In-memory link driver: delivers frames in order, optionally logging the
 * exact wire bytes and letting a hook mutate them in flight (tamper tests).
 */

struct WireItem
{
    Direction dir;
    Bytes     bytes;
};

struct WireLog
{
    std::vector<WireItem> items;

    [[nodiscard]] Bytes concat( std::optional<Direction> dir = {} ) const
    {
        Bytes out;
        for( const auto& item : items )
            if( !dir || item.dir == *dir )
                out.insert( out.end(), item.bytes.begin(), item.bytes.end() );
        return out;
    }

    /// Frames re-decoded from the logged bytes, in transfer order.
    [[nodiscard]] std::vector<std::pair<Direction, RecordFrame>> frames() const
    {
        std::vector<std::pair<Direction, RecordFrame>> out;
        for( const auto& item : items )
            if( auto r = decode_record( item.bytes ); r.ok() )
                out.emplace_back( item.dir, std::move( r.value().frame ) );
        return out;
    }
};

using TamperHook = std::function<void( Direction, std::size_t index, Bytes& )>;

struct HandshakeRun
{
    ClientConnection client;
    ServerConnection server;
};

/// Runs client and server to quiescence over an ordered, lossless
/// in-memory link. Exactly one transport connection; both handshakes of a
/// masked run happen inside it.
inline Result<HandshakeRun> run_handshakes( const ClientConfig& client_cfg,
        const ServerConfig& server_cfg, WireLog* log = nullptr,
        const TamperHook& tamper = nullptr )
{
    auto client = ClientConnection::create( client_cfg );
    if( !client.ok() )
        return client.error();
    auto server = ServerConnection::create( server_cfg );
    if( !server.ok() )
        return server.error();
    ClientConnection& c = client.value();
    ServerConnection& s = server.value();

    std::vector<RecordFrame> to_server;
    std::vector<RecordFrame> to_client;
    std::size_t              frame_index = 0;

    auto transfer = [&]( Direction dir, const RecordFrame& frame,
                             std::vector<RecordFrame>& queue ) -> Status
    {
        auto bytes = encode_record( frame );
        if( !bytes.ok() )
            return bytes.error();
        if( tamper )
            tamper( dir, frame_index, bytes.value() );
        ++frame_index;
        if( log )
            log->items.push_back( { dir, bytes.value() } );
        auto reparsed = decode_record( bytes.value() );
        if( !reparsed.ok() || reparsed.value().consumed != bytes.value().size() )
            return Error{ Err::decode_error, "wire bytes no longer frame a record" };
        queue.push_back( std::move( reparsed.value().frame ) );
        return ok_status();
    };

    auto first = c.step( std::nullopt );
    if( !first.ok() )
        return first.error();
    for( const auto& f : first.value() )
        if( auto st = transfer( Direction::client_to_server, f, to_server ); !st.ok() )
            return st.error();

    for( int rounds = 0; rounds < 256; ++rounds )
    {
        if( to_server.empty() && to_client.empty() )
            break;
        while( !to_server.empty() )
        {
            RecordFrame frame = std::move( to_server.front() );
            to_server.erase( to_server.begin() );
            auto replies = s.step( frame );
            if( !replies.ok() )
            {
                if( auto alert = s.take_alert_to_send() )
                    (void)transfer( Direction::server_to_client, *alert, to_client );
                for( const auto& f : to_client ) // let the client observe the abort
                    (void)c.step( f );
                return replies.error();
            }
            for( const auto& f : replies.value() )
                if( auto st = transfer( Direction::server_to_client, f, to_client ); !st.ok() )
                    return st.error();
        }
        while( !to_client.empty() )
        {
            RecordFrame frame = std::move( to_client.front() );
            to_client.erase( to_client.begin() );
            auto replies = c.step( frame );
            if( !replies.ok() )
            {
                if( auto alert = c.take_alert_to_send() )
                    (void)transfer( Direction::client_to_server, *alert, to_server );
                for( const auto& f : to_server )
                    (void)s.step( f );
                return replies.error();
            }
            for( const auto& f : replies.value() )
                if( auto st = transfer( Direction::client_to_server, f, to_server ); !st.ok() )
                    return st.error();
        }
    }
    if( c.handshake_in_progress() || s.handshake_in_progress() )
        return Error{ Err::protocol_violation, "handshake did not reach quiescence" };
    return HandshakeRun{ std::move( c ), std::move( s ) };
}

/// Masked-mode convenience wrapper: both ends must reach SecondComplete.
inline Result<HandshakeRun> establish_masked_channel( const ClientConfig& client_cfg,
        const ServerConfig& server_cfg, WireLog* log = nullptr )
{
    if( client_cfg.mode != ClientMode::masked )
        return Error{ Err::invalid_phase, "client config is not masked mode" };
    auto run = run_handshakes( client_cfg, server_cfg, log );
    if( !run.ok() )
        return run.error();
    if( !run.value().client.fallback_used()
            && ( run.value().client.phase() != HandshakePhase::second_complete
                    || run.value().server.phase() != HandshakePhase::second_complete ) )
        return Error{ Err::handshake_failure, "channel did not reach SecondComplete" };
    return run;
}

} // namespace veil
