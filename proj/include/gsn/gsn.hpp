#pragma once

#include "gsn/error.hpp"
#include "gsn/rng.hpp"
#include "gsn/numkit.hpp"
#include "gsn/corruption.hpp"
#include "gsn/recon.hpp"
#include "gsn/network.hpp"
#include "gsn/trainer.hpp"
#include "gsn/chain.hpp"
#include "gsn/oracle.hpp"
#include "gsn/parzen.hpp"
#include "gsn/io.hpp"
#include "gsn/config.hpp"
#include "gsn/verify.hpp"
#include "gsn/gradcheck.hpp"
