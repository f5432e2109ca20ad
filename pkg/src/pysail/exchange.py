"""Helper functions for retrieving basis sets from the Basis Set Exchange"""

from typing import Iterable, Optional

from aiohttp import ClientSession

from .constants import ELEMENTS, bse_api_base


def basis_url(name: str) -> str:
    return f"{bse_api_base}/basis/{name.lower()}/format/gaussian94/"


async def fetch_basis(
    name: str, elements: Iterable[str], session: Optional[ClientSession] = None
) -> Optional[str]:
    """Tries to download Gaussian-94 basis text for the given element symbols.
    Returns None when the service does not answer with 200."""
    numbers = ",".join(str(ELEMENTS[symbol.capitalize()]) for symbol in elements)
    params = {"elements": numbers}
    if session is None:
        async with ClientSession() as owned:
            return await _fetch(owned, name, params)
    return await _fetch(session, name, params)


async def _fetch(session: ClientSession, name: str, params: dict) -> Optional[str]:
    async with session.get(basis_url(name), params=params) as response:
        if response.status != 200:
            return None
        return await response.text()
