/*
 * Copyright 2026 The veil authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include <cassert>
#include <string>
#include <utility>
#include <variant>

namespace veil
{

enum class Err
{
    need_more_data,
    decode_error,
    payload_too_large,
    invalid_host_name,
    unknown_suite,
    malformed_public_value,
    auth_failure,
    sequence_exhausted,
    protocol_violation,
    certificate_rejected,
    finished_mismatch,
    handshake_failure,
    invalid_phase,
    not_found,
    invalid_subject,
    missing_default_certificate,
    parse_error,
    peer_alert,
    io_error,
};

constexpr const char* err_name( Err e ) noexcept
{
    switch( e )
    {
        case Err::need_more_data:              return "NeedMoreData";
        case Err::decode_error:                return "DecodeError";
        case Err::payload_too_large:           return "PayloadTooLarge";
        case Err::invalid_host_name:           return "InvalidHostName";
        case Err::unknown_suite:               return "UnknownSuite";
        case Err::malformed_public_value:      return "MalformedPublicValue";
        case Err::auth_failure:                return "AuthFailure";
        case Err::sequence_exhausted:          return "SequenceExhausted";
        case Err::protocol_violation:          return "ProtocolViolation";
        case Err::certificate_rejected:        return "CertificateRejected";
        case Err::finished_mismatch:           return "FinishedMismatch";
        case Err::handshake_failure:           return "HandshakeFailure";
        case Err::invalid_phase:               return "InvalidPhase";
        case Err::not_found:                   return "NotFound";
        case Err::invalid_subject:             return "InvalidSubject";
        case Err::missing_default_certificate: return "MissingDefaultCertificate";
        case Err::parse_error:                 return "ParseError";
        case Err::peer_alert:                  return "PeerAlert";
        case Err::io_error:                    return "IoError";
    }
    return "UnknownError";
}

struct Error
{
    Err code;
    std::string detail;

    [[nodiscard]] std::string to_string() const
    {
        std::string s = err_name( code );
        if( !detail.empty() )
        {
            s += ": ";
            s += detail;
        }
        return s;
    }
};

/// Value-or-error carrier used on every fallible path; decode and protocol
/// code never throws on adversarial input.
template<typename T>
class Result
{
public:
    Result( T value )
        : m_v( std::move( value ) )
    {}
    Result( Error error )
        : m_v( std::move( error ) )
    {}
    Result( Err code, std::string detail = {} )
        : m_v( Error{ code, std::move( detail ) } )
    {}

    [[nodiscard]] bool ok() const noexcept { return std::holds_alternative<T>( m_v ); }
    explicit operator bool() const noexcept { return ok(); }

    [[nodiscard]] T& value() &
    {
        assert( ok() );
        return std::get<T>( m_v );
    }
    [[nodiscard]] const T& value() const&
    {
        assert( ok() );
        return std::get<T>( m_v );
    }
    [[nodiscard]] T&& value() &&
    {
        assert( ok() );
        return std::get<T>( std::move( m_v ) );
    }

    [[nodiscard]] const Error& error() const
    {
        assert( !ok() );
        return std::get<Error>( m_v );
    }
    [[nodiscard]] Err code() const { return error().code; }

private:
    std::variant<T, Error> m_v;
};

using Status = Result<std::monostate>;

inline Status ok_status() { return Status( std::monostate{} ); }

} // namespace veil
