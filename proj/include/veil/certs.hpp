/*
 * Copyright 2026 The veil authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include <cstdint>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <veil/bytes.hpp>
#include <veil/crypto.hpp>
#include <veil/result.hpp>
#include <veil/wire.hpp>

namespace veil
{

/*
 * Self-signed certificate stand-in. Serialized form is line-oriented text:
 *
 *   subject: video.example
 *   not_before: 2026-08-11T00:00:00Z
 *   not_after: 2026-09-10T00:00:00Z
 *   serial: 1234567890
 *   public: <hex>
 *   signature: <hex>
 *
 * The signature covers every line above it, made with the subject's own
 * key. Store files append a `private: <hex>` line per entry, blocks are
 * separated by blank lines, and exactly one block carries `default: true`
 * (written first). Wire certificates never carry private or default lines.
 */

struct CertificateDoc
{
    std::string   subject;
    Bytes         public_part;
    std::int64_t  not_before = 0; // unix seconds, UTC
    std::int64_t  not_after  = 0;
    std::uint64_t serial     = 0;
    Bytes         signature;

    bool operator==( const CertificateDoc& ) const = default;
};

inline std::string format_utc( std::int64_t unix_seconds )
{
    std::time_t t = static_cast<std::time_t>( unix_seconds );
    std::tm     tm{};
    gmtime_r( &t, &tm );
    char buf[80];
    std::snprintf( buf, sizeof( buf ), "%04d-%02d-%02dT%02d:%02d:%02dZ", tm.tm_year + 1900,
            tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec );
    return buf;
}

inline std::optional<std::int64_t> parse_utc( const std::string& text )
{
    std::tm tm{};
    int     y, mo, d, h, mi, s;
    char    trail;
    if( std::sscanf( text.c_str(), "%d-%d-%dT%d:%d:%d%c", &y, &mo, &d, &h, &mi, &s, &trail ) != 7
            || trail != 'Z' )
        return std::nullopt;
    tm.tm_year = y - 1900;
    tm.tm_mon  = mo - 1;
    tm.tm_mday = d;
    tm.tm_hour = h;
    tm.tm_min  = mi;
    tm.tm_sec  = s;
    return static_cast<std::int64_t>( timegm( &tm ) );
}

/// Canonical to-be-signed bytes: every serialized line above `signature:`.
inline Bytes certificate_tbs_bytes( const CertificateDoc& doc )
{
    std::ostringstream os;
    os << "subject: " << doc.subject << '\n';
    os << "not_before: " << format_utc( doc.not_before ) << '\n';
    os << "not_after: " << format_utc( doc.not_after ) << '\n';
    os << "serial: " << doc.serial << '\n';
    os << "public: " << to_hex( doc.public_part ) << '\n';
    return to_bytes( os.str() );
}

inline std::string certificate_to_text( const CertificateDoc& doc )
{
    std::string out = to_string( certificate_tbs_bytes( doc ) );
    out += "signature: " + to_hex( doc.signature ) + "\n";
    return out;
}

inline Bytes certificate_to_wire( const CertificateDoc& doc )
{
    return to_bytes( certificate_to_text( doc ) );
}

namespace detail
{

struct CertLines
{
    std::map<std::string, std::string> kv;
    std::vector<std::string>           order;
};

inline Result<CertLines> parse_cert_lines( std::string_view text )
{
    CertLines          out;
    std::istringstream is{ std::string( text ) };
    std::string        line;
    while( std::getline( is, line ) )
    {
        if( line.empty() )
            continue;
        const auto colon = line.find( ": " );
        if( colon == std::string::npos )
            return Error{ Err::parse_error, "expected `key: value`, got \"" + line + "\"" };
        const std::string key   = line.substr( 0, colon );
        const std::string value = line.substr( colon + 2 );
        if( out.kv.count( key ) )
            return Error{ Err::parse_error, "duplicate field " + key };
        out.kv[key] = value;
        out.order.push_back( key );
    }
    return out;
}

inline Result<CertificateDoc> cert_from_lines( const CertLines& lines )
{
    CertificateDoc doc;
    for( const char* field : { "subject", "not_before", "not_after", "serial", "public", "signature" } )
        if( !lines.kv.count( field ) )
            return Error{ Err::parse_error, std::string( "missing field " ) + field };
    doc.subject    = lines.kv.at( "subject" );
    auto nb        = parse_utc( lines.kv.at( "not_before" ) );
    auto na        = parse_utc( lines.kv.at( "not_after" ) );
    if( !nb || !na )
        return Error{ Err::parse_error, "bad timestamp" };
    doc.not_before = *nb;
    doc.not_after  = *na;
    try
    {
        doc.serial = std::stoull( lines.kv.at( "serial" ) );
    }
    catch( ... )
    {
        return Error{ Err::parse_error, "bad serial" };
    }
    auto pub = from_hex( lines.kv.at( "public" ) );
    auto sig = from_hex( lines.kv.at( "signature" ) );
    if( !pub || !sig )
        return Error{ Err::parse_error, "bad hex field" };
    doc.public_part = std::move( *pub );
    doc.signature   = std::move( *sig );
    if( doc.not_before >= doc.not_after )
        return Error{ Err::parse_error, "not_before must precede not_after" };
    return doc;
}

} // namespace detail

/// Parses a wire certificate. Private material is rejected here: it must
/// never appear outside store files.
inline Result<CertificateDoc> certificate_from_text( std::string_view text )
{
    auto lines = detail::parse_cert_lines( text );
    if( !lines.ok() )
        return lines.error();
    for( const auto& key : lines.value().order )
        if( key != "subject" && key != "not_before" && key != "not_after" && key != "serial"
                && key != "public" && key != "signature" )
            return Error{ Err::parse_error, "unexpected field " + key };
    return detail::cert_from_lines( lines.value() );
}

inline Result<std::pair<CertificateDoc, KeyPair>> generate_self_signed( std::string_view subject,
        int validity_days, std::optional<std::uint64_t> rng_seed = {},
        std::optional<std::int64_t> now = {} )
{
    if( subject.empty() )
        return Error{ Err::invalid_subject, "empty subject" };
    if( auto v = SniValue::parse( subject ); !v.ok() )
        return Error{ Err::invalid_subject, v.error().detail };
    if( validity_days <= 0 )
        return Error{ Err::invalid_subject, "validity must be positive" };

    DetRng rng( rng_seed );
    auto   kp = keypair_generate( kSuiteReal, rng );
    if( !kp.ok() )
        return kp.error();

    CertificateDoc doc;
    doc.subject     = std::string( subject );
    doc.public_part = kp.value().public_part;
    doc.not_before  = now ? *now : static_cast<std::int64_t>( std::time( nullptr ) );
    doc.not_after   = doc.not_before + std::int64_t( validity_days ) * 86400;
    doc.serial      = rng.u64();
    doc.signature   = sign( kp.value(), certificate_tbs_bytes( doc ) );
    return std::pair<CertificateDoc, KeyPair>{ std::move( doc ), std::move( kp.value() ) };
}

enum class CertStatus
{
    valid,
    name_mismatch,
    expired,
    bad_signature,
};

constexpr const char* cert_status_name( CertStatus s ) noexcept
{
    switch( s )
    {
        case CertStatus::valid:         return "Valid";
        case CertStatus::name_mismatch: return "NameMismatch";
        case CertStatus::expired:       return "Expired";
        case CertStatus::bad_signature: return "BadSignature";
    }
    return "?";
}

/// Checks signature, then validity window, then (when given) exact subject
/// equality; the first failing check wins. An Expired result also covers
/// not-yet-valid documents.
inline CertStatus validate_certificate( const CertificateDoc& doc,
        const std::optional<std::string>& expected_name, std::int64_t now )
{
    if( !verify( doc.public_part, certificate_tbs_bytes( doc ), doc.signature ) )
        return CertStatus::bad_signature;
    if( now < doc.not_before || now > doc.not_after )
        return CertStatus::expired;
    if( expected_name && doc.subject != *expected_name )
        return CertStatus::name_mismatch;
    return CertStatus::valid;
}

struct CertEntry
{
    CertificateDoc cert;
    KeyPair        key;

    bool operator==( const CertEntry& ) const = default;
};

struct CertStore
{
    CertEntry                        default_entry;
    std::map<std::string, CertEntry> named;
    std::vector<std::string>         load_warnings; // not persisted

    bool operator==( const CertStore& other ) const
    {
        return default_entry == other.default_entry && named == other.named;
    }
};

/// Absent name selects the default entry; a present name must match a
/// named entry exactly (no wildcards).
inline Result<CertEntry> store_lookup( const CertStore& store, const std::optional<SniValue>& name )
{
    if( !name )
        return store.default_entry;
    auto it = store.named.find( name->host() );
    if( it == store.named.end() )
        return Error{ Err::not_found, "no certificate for " + name->host() };
    return it->second;
}

namespace detail
{

struct RawStoreEntry
{
    CertEntry entry;
    bool      is_default = false;
};

/// Store files are also read where no default is required (certgen edits
/// partially built stores), hence this raw layer under store_load.
inline Result<std::vector<RawStoreEntry>> raw_store_from_text( std::string_view text )
{
    std::vector<RawStoreEntry> out;
    std::size_t                pos = 0;
    const std::string          body( text );
    while( pos < body.size() )
    {
        std::size_t end   = body.find( "\n\n", pos );
        std::string block = body.substr( pos, end == std::string::npos ? std::string::npos : end - pos );
        pos               = end == std::string::npos ? body.size() : end + 2;
        bool blank        = true;
        for( char c : block )
            if( c != '\n' && c != ' ' && c != '\t' )
                blank = false;
        if( blank )
            continue;

        auto lines = parse_cert_lines( block );
        if( !lines.ok() )
            return lines.error();
        RawStoreEntry raw;
        for( const auto& key : lines.value().order )
            if( key != "subject" && key != "not_before" && key != "not_after" && key != "serial"
                    && key != "public" && key != "signature" && key != "private" && key != "default" )
                return Error{ Err::parse_error, "unexpected field " + key };
        auto doc = cert_from_lines( lines.value() );
        if( !doc.ok() )
            return doc.error();
        raw.entry.cert = std::move( doc.value() );
        if( !lines.value().kv.count( "private" ) )
            return Error{ Err::parse_error, "store entry missing private key" };
        auto priv = from_hex( lines.value().kv.at( "private" ) );
        if( !priv )
            return Error{ Err::parse_error, "bad private key hex" };
        raw.entry.key.suite        = kSuiteReal;
        raw.entry.key.private_part = std::move( *priv );
        raw.entry.key.public_part  = raw.entry.cert.public_part;
        if( lines.value().kv.count( "default" ) )
        {
            if( lines.value().kv.at( "default" ) != "true" )
                return Error{ Err::parse_error, "default field must be `true`" };
            raw.is_default = true;
        }
        out.push_back( std::move( raw ) );
    }
    return out;
}

inline std::string raw_entry_to_text( const RawStoreEntry& raw )
{
    std::string out = "subject: " + raw.entry.cert.subject + "\n";
    if( raw.is_default )
        out += "default: true\n";
    std::string rest = certificate_to_text( raw.entry.cert );
    out += rest.substr( rest.find( '\n' ) + 1 ); // drop duplicate subject line
    out += "private: " + to_hex( raw.entry.key.private_part ) + "\n";
    return out;
}

inline Result<std::string> read_file( const std::string& path )
{
    std::ifstream in( path, std::ios::binary );
    if( !in )
        return Error{ Err::io_error, "cannot open " + path };
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline Status write_file( const std::string& path, std::string_view content )
{
    std::ofstream out( path, std::ios::binary | std::ios::trunc );
    if( !out )
        return Error{ Err::io_error, "cannot write " + path };
    out << content;
    out.flush();
    if( !out )
        return Error{ Err::io_error, "write failed for " + path };
    return ok_status();
}

} // namespace detail

inline Result<CertStore> store_from_text( std::string_view text )
{
    auto raw = detail::raw_store_from_text( text );
    if( !raw.ok() )
        return raw.error();
    CertStore store;
    bool      have_default = false;
    for( auto& entry : raw.value() )
    {
        if( entry.is_default )
        {
            if( have_default )
                return Error{ Err::parse_error, "multiple default entries" };
            store.default_entry = std::move( entry.entry );
            have_default        = true;
        }
        else
        {
            if( store.named.count( entry.entry.cert.subject ) )
                return Error{ Err::parse_error,
                        "duplicate subject " + entry.entry.cert.subject };
            store.named.emplace( entry.entry.cert.subject, std::move( entry.entry ) );
        }
    }
    if( !have_default )
        return Error{ Err::missing_default_certificate, "store has no default entry" };

    // Certificate reuse across entries invites cross-name correlation;
    // flag it rather than reject it.
    std::map<std::string, int> pub_seen;
    ++pub_seen[to_hex( store.default_entry.cert.public_part )];
    for( const auto& [name, entry] : store.named )
        ++pub_seen[to_hex( entry.cert.public_part )];
    for( const auto& [pub, count] : pub_seen )
        if( count > 1 )
            store.load_warnings.push_back( "certificate key reused by " + std::to_string( count )
                    + " entries" );
    return store;
}

inline std::string store_to_text( const CertStore& store )
{
    std::string out = detail::raw_entry_to_text( { store.default_entry, true } );
    for( const auto& [name, entry] : store.named )
    {
        out += "\n";
        out += detail::raw_entry_to_text( { entry, false } );
    }
    return out;
}

inline Result<CertStore> store_load( const std::string& path )
{
    auto text = detail::read_file( path );
    if( !text.ok() )
        return text.error();
    return store_from_text( text.value() );
}

inline Status store_save( const CertStore& store, const std::string& path )
{
    return detail::write_file( path, store_to_text( store ) );
}

} // namespace veil
