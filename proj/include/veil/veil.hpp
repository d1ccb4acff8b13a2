/*
 * Copyright 2026 The veil authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include <veil/bytes.hpp>
#include <veil/capture.hpp>
#include <veil/certs.hpp>
#include <veil/crypto.hpp>
#include <veil/handshake.hpp>
#include <veil/log.hpp>
#include <veil/observer.hpp>
#include <veil/result.hpp>
#include <veil/rng.hpp>
#include <veil/shaper.hpp>
#include <veil/simulate.hpp>
#include <veil/wire.hpp>
