#pragma once

// Embedded copy of data/keywords.txt; the two must stay identical.

#include <string_view>

namespace alsim {

inline constexpr std::string_view kDefaultKeywordsProvenance =
    "built-in lexicon of common English profanity, insult and threat vocabulary "
    "compiled from public bad-word lists (identity slurs excluded)";

inline constexpr std::string_view kDefaultKeywords[] = {
    "arse",
    "arsehole",
    "ass",
    "asshat",
    "asshole",
    "assholes",
    "bastard",
    "bastards",
    "bitch",
    "bitches",
    "bitchy",
    "bloody",
    "bollocks",
    "bugger",
    "bullshit",
    "butthead",
    "clown",
    "cock",
    "cocksucker",
    "coward",
    "crap",
    "crappy",
    "creep",
    "cretin",
    "cunt",
    "cunts",
    "damn",
    "damned",
    "dick",
    "dickhead",
    "dicks",
    "dimwit",
    "dipshit",
    "disgusting",
    "douche",
    "douchebag",
    "dumb",
    "dumbass",
    "dumber",
    "dumbest",
    "dumbo",
    "fatass",
    "filth",
    "filthy",
    "fool",
    "foolish",
    "fools",
    "freak",
    "fuck",
    "fucked",
    "fucker",
    "fuckers",
    "fuckface",
    "fuckhead",
    "fucking",
    "fucks",
    "fuckwit",
    "garbage",
    "git",
    "goddamn",
    "halfwit",
    "hate",
    "hated",
    "hateful",
    "hater",
    "hates",
    "idiot",
    "idiotic",
    "idiots",
    "ignorant",
    "imbecile",
    "incompetent",
    "jackass",
    "jerk",
    "jerks",
    "kill",
    "killing",
    "kys",
    "loser",
    "losers",
    "lunatic",
    "maggot",
    "moron",
    "moronic",
    "morons",
    "motherfucker",
    "motherfuckers",
    "nitwit",
    "nutjob",
    "nutcase",
    "pathetic",
    "pervert",
    "pig",
    "pigs",
    "piss",
    "pissed",
    "prick",
    "pricks",
    "psycho",
    "pussy",
    "rape",
    "rapist",
    "rat",
    "retard",
    "retarded",
    "scum",
    "scumbag",
    "shit",
    "shithead",
    "shits",
    "shitty",
    "shut",
    "sicko",
    "skank",
    "slag",
    "slut",
    "sluts",
    "stfu",
    "stupid",
    "stupidest",
    "stupidity",
    "sucks",
    "suck",
    "swine",
    "thug",
    "trash",
    "twat",
    "twit",
    "ugly",
    "useless",
    "vermin",
    "wanker",
    "wankers",
    "whore",
    "whores",
    "worthless",
    "wtf",
};

}  // namespace alsim
