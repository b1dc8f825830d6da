"""Glossary term definitions for the trace viewer."""

GLOSSARY_TERMS = {
    "methods": {
        "label": "Methods",
        "icon": "🧮",
        "terms": {
            "Sketch-and-project": {
                "definition": "Each step draws a random sketch S, keeps only the sketched equations SᵀAx = Sᵀb and projects the iterate onto them in the B-norm.",
                "formula": r"$$x_{k+1} = x_k - \omega B^{-1}A^\top S (S^\top A B^{-1} A^\top S)^\dagger S^\top (A x_k - b) + \epsilon_k$$",
            },
            "iBasic": {
                "definition": "Sketch-and-project with an error term ε_k added after each projection step.",
            },
            "iSDSA": {
                "definition": "Inexact stochastic dual subspace ascent: the same steps taken on the dual problem, whose primal images reproduce iBasic iterates.",
            },
            "iRBK / iRBCD": {
                "definition": "Block Kaczmarz (B = I) and block coordinate descent (B = A) with the small sketched system solved approximately by r steps of CG.",
            },
        },
    },
    "inexactness": {
        "label": "Inexactness",
        "icon": "🎯",
        "terms": {
            "Abstract error": {
                "definition": "An injected error of prescribed B-norm σ_k, either fixed or decaying.",
            },
            "Proportional error": {
                "definition": "An error whose norm is q times the current distance to the solution, or q times the root of twice the stochastic function value.",
            },
            "Orthogonal error": {
                "definition": "An error B-orthogonal to the exact step's remaining error, which keeps the cross term of the error expansion at zero.",
            },
            "Structured error": {
                "definition": "The error produced by solving the sketched system with an inner iterative method instead of exactly.",
                "note": "Structured errors are orthogonal by construction.",
            },
        },
    },
    "rates": {
        "label": "Rates and Certificates",
        "icon": "📐",
        "terms": {
            "λ⁺min": {
                "definition": "Smallest nonzero eigenvalue of W = B^{-1/2} E[Z] B^{-1/2}, where Z = AᵀS(SᵀAB⁻¹AᵀS)†SᵀA.",
            },
            "ρ": {
                "definition": "Exact method rate per step.",
                "formula": r"$$\rho = 1 - \omega(2 - \omega)\lambda^+_{\min}$$",
            },
            "θ": {
                "definition": "Worst contraction of the inner solver over the sketch population, for example ((√κ − 1)/(√κ + 1))⁴ for CG.",
            },
            "Certificate": {
                "definition": "An upper bound on the expected error after k steps.",
                "interpretation": "**PASS**: the trial mean stays below the bound (with slack and three standard errors) at every k\n\n**FAIL**: the first k where it does not is reported",
            },
        },
    },
    "traces": {
        "label": "Trace Files",
        "icon": "📄",
        "terms": {
            "Relative error": {
                "definition": "‖x_k − x*‖²_B / ‖x_0 − x*‖²_B, recorded at every iteration of every trial.",
            },
            "Wall clock": {
                "definition": "Seconds spent drawing the sketch and taking the step at iteration k.",
                "note": "Timings depend on the machine; compare them only between runs on the same one.",
            },
        },
    },
}
